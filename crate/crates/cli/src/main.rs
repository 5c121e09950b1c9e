use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use neb_core::benchmarks::{ProblemKind, ProblemSpec};
use neb_core::harness::{self, ExperimentPlan, Normalization, NoiseRate, SettingKey, TrialRecord};
use neb_core::noise::NoiseModel;
use neb_core::oracle::{self, ChainSpec};
use neb_core::stats;
use neb_core::Error;

/// Noisy evolutionary benchmarking experiments.
#[derive(Parser)]
#[command(name = "neb", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Full,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizeArg {
    None,
    #[value(name = "n_ln_n")]
    NLnN,
    #[value(name = "n_squared")]
    NSquared,
}

impl From<NormalizeArg> for Normalization {
    fn from(v: NormalizeArg) -> Self {
        match v {
            NormalizeArg::None => Normalization::None,
            NormalizeArg::NLnN => Normalization::NLnN,
            NormalizeArg::NSquared => Normalization::NSquared,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment plan and write one CSV row per trial.
    Run {
        plan: PathBuf,
        #[arg(long, env = "NEB_WORKERS", default_value_t = default_workers())]
        workers: usize,
        /// Results CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Scale::Full)]
        scale: Scale,
        /// Append finished trials here and skip those already present.
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    /// p-values of every noise rate against the baseline rate.
    Stats {
        results: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        baseline_q: f64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Number of comparisons for the Bonferroni correction.
        #[arg(long, default_value_t = 3)]
        m: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-setting means and deviations, ready for plotting.
    Plotdata {
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = NormalizeArg::None)]
        normalize: NormalizeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact expected runtime of the (1+1) EA under bitwise noise.
    Oracle {
        /// `onemax` or `jump`.
        #[arg(long)]
        problem: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: Option<usize>,
        /// Noise rate: a number, `ln_n_over_n` or `one_over_6e`.
        #[arg(long, default_value = "0")]
        q: String,
        /// Report evaluations including the parent re-evaluation.
        #[arg(long)]
        count_parent_reeval: bool,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => 2,
        _ => 1,
    }
}

fn output(path: &Option<PathBuf>) -> neb_core::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_results(path: &Path) -> neb_core::Result<Vec<TrialRecord>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let records = harness::read_records_csv(file).map_err(|e| match e {
        Error::Io(m) => Error::Io(m),
        other => Error::Parse(format!("{}: {other}", path.display())),
    })?;
    if records.is_empty() {
        return Err(Error::invalid(format!("{}: no result rows", path.display())));
    }
    Ok(records)
}

fn cmd_run(
    plan: &Path,
    workers: usize,
    out: &Option<PathBuf>,
    scale: Scale,
    journal: &Option<PathBuf>,
) -> neb_core::Result<()> {
    let mut plan = ExperimentPlan::load(plan)?;
    if let Scale::Desk = scale {
        plan = plan.desk_scaled(20);
    }
    log::info!("plan {}: {} trials on {workers} workers", plan.id, plan.trial_count());
    let records = match journal {
        Some(j) => harness::execute_resumable(&plan, workers, j)?,
        None => harness::execute(&plan, workers)?,
    };
    let failed = records.iter().filter(|r| r.is_failed()).count();
    if failed > 0 {
        log::warn!("{failed} trials failed");
    }
    let mut w = output(out)?;
    harness::write_records_csv(&records, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_stats(results: &Path, baseline_q: f64, alpha: f64, m: usize, out: &Option<PathBuf>) -> neb_core::Result<()> {
    // validate before doing any work
    stats::bonferroni_significant(0.0, m, alpha)?;
    let records = load_results(results)?;
    let rows = stats::pvalue_table(&records, baseline_q);
    let mut w = output(out)?;
    stats::write_pvalue_csv(&rows, Some((alpha, m)), &mut w)?;
    w.flush()?;
    Ok(())
}

const PLOT_HEADER: &str =
    "problem,algorithm,lambda_rule,q,n,mean,std,mean_normalized,std_normalized,completed,censored";

fn cmd_plotdata(results: &Path, normalize: Normalization, out: &Option<PathBuf>) -> neb_core::Result<()> {
    let records = load_results(results)?;
    let summaries = harness::aggregate(&records, SettingKey::of, normalize);
    let mut w = output(out)?;
    writeln!(w, "{PLOT_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (key, s) in summaries {
        let problem = match key.curve.k {
            Some(k) => format!("{}_{k}", key.curve.problem.name()),
            None => key.curve.problem.name().to_string(),
        };
        writeln!(
            w,
            "{problem},{},{},{},{},{},{},{},{},{},{}",
            key.curve.algorithm,
            key.curve.lambda_rule,
            key.q,
            key.n,
            opt(s.mean),
            opt(s.std),
            opt(s.mean_normalized),
            opt(s.std_normalized),
            s.completed,
            s.censored
        )?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_oracle(problem: &str, n: usize, k: Option<usize>, q: &str, count_parent: bool) -> neb_core::Result<()> {
    let spec = ProblemSpec::new(ProblemKind::parse(problem)?, n, k)?;
    let rate: NoiseRate = q.parse().map_err(|_| Error::invalid(format!("bad noise rate {q:?}")))?;
    let noise = NoiseModel::bitwise(rate.resolve(n))?;
    let chain = ChainSpec::new(spec, noise)?;
    let result = oracle::expected_runtime_1p1(&chain);
    if result.diverged {
        println!("inf");
    } else {
        // shortest round-trip form carries full precision
        println!("{}", result.evaluations(count_parent));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run {
            plan,
            workers,
            out,
            scale,
            journal,
        } => cmd_run(plan, *workers, out, *scale, journal),
        Command::Stats {
            results,
            baseline_q,
            alpha,
            m,
            out,
        } => cmd_stats(results, *baseline_q, *alpha, *m, out),
        Command::Plotdata { results, normalize, out } => cmd_plotdata(results, (*normalize).into(), out),
        Command::Oracle {
            problem,
            n,
            k,
            q,
            count_parent_reeval,
        } => cmd_oracle(problem, *n, *k, q, *count_parent_reeval),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("neb: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
