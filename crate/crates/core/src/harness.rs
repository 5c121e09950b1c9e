//! Experiment plans, their expansion into seeded trials, parallel execution,
//! result persistence and aggregation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algorithms::{self, AlgorithmKind, AlgorithmSpec, RunOptions, DEFAULT_BUDGET};
use crate::benchmarks::{ProblemKind, ProblemSpec};
use crate::bitvec::derive_seed;
use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseModel};

/// Exact header of the trial result CSV.
pub const RESULTS_HEADER: [&str; 16] = [
    "plan_id", "problem", "n", "k", "algorithm", "lambda", "p", "c", "q", "trial", "seed", "evaluations",
    "iterations", "done", "censored", "wall_ms",
];

fn parse_tagged_const(s: &str) -> Option<&str> {
    s.strip_prefix("const:")
}

/// How λ is derived from the problem size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LambdaRule {
    Const(usize),
    LnN,
    HalfLnN,
    SqrtN,
    HalfN,
    /// `sqrt(n)^(k-1) / sqrt(k)^k`, Jump only.
    JumpHeavy,
}

impl LambdaRule {
    /// Unrounded value of the rule.
    pub fn raw(&self, problem: &ProblemSpec) -> Result<f64> {
        let n = problem.n() as f64;
        Ok(match self {
            LambdaRule::Const(v) => *v as f64,
            LambdaRule::LnN => n.ln(),
            LambdaRule::HalfLnN => n.ln() / 2.0,
            LambdaRule::SqrtN => n.sqrt(),
            LambdaRule::HalfN => n / 2.0,
            LambdaRule::JumpHeavy => {
                let k = problem
                    .gap()
                    .ok_or_else(|| Error::InvalidPlan(format!("lambda rule jump_heavy needs a jump problem, got {problem}")))?
                    as f64;
                n.sqrt().powf(k - 1.0) / k.sqrt().powf(k)
            }
        })
    }

    /// Nearest integer (halves away from zero), floored at 1. The flag is set when clamping occurred.
    pub fn resolve(&self, problem: &ProblemSpec) -> Result<(usize, bool)> {
        let rounded = self.raw(problem)?.round();
        if rounded < 1.0 {
            Ok((1, true))
        } else {
            Ok((rounded as usize, false))
        }
    }
}

impl fmt::Display for LambdaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LambdaRule::Const(v) => write!(f, "const:{v}"),
            LambdaRule::LnN => f.write_str("ln_n"),
            LambdaRule::HalfLnN => f.write_str("half_ln_n"),
            LambdaRule::SqrtN => f.write_str("sqrt_n"),
            LambdaRule::HalfN => f.write_str("half_n"),
            LambdaRule::JumpHeavy => f.write_str("jump_heavy"),
        }
    }
}

impl FromStr for LambdaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ln_n" => LambdaRule::LnN,
            "half_ln_n" => LambdaRule::HalfLnN,
            "sqrt_n" => LambdaRule::SqrtN,
            "half_n" => LambdaRule::HalfN,
            "jump_heavy" => LambdaRule::JumpHeavy,
            other => {
                let v = parse_tagged_const(other)
                    .unwrap_or(other)
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidPlan(format!("unknown lambda rule {other:?}")))?;
                LambdaRule::Const(v)
            }
        })
    }
}

/// Rule for the GA mutation rate `p` or crossover bias `c`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub enum ParamRule {
    /// `p = λ/n`, `c = 1/λ`.
    Standard,
    /// `p = c = sqrt(k/n)`.
    Jump,
    Const(f64),
}

impl ParamRule {
    fn resolve(&self, is_mutation: bool, lambda: usize, problem: &ProblemSpec) -> Result<f64> {
        let n = problem.n() as f64;
        Ok(match self {
            ParamRule::Standard if is_mutation => lambda as f64 / n,
            ParamRule::Standard => 1.0 / lambda as f64,
            ParamRule::Jump => {
                let k = problem
                    .gap()
                    .ok_or_else(|| Error::InvalidPlan(format!("parameter rule jump needs a jump problem, got {problem}")))?;
                (k as f64 / n).sqrt()
            }
            ParamRule::Const(v) => *v,
        })
    }
}

impl fmt::Display for ParamRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamRule::Standard => f.write_str("standard"),
            ParamRule::Jump => f.write_str("jump"),
            ParamRule::Const(v) => write!(f, "const:{v}"),
        }
    }
}

impl FromStr for ParamRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ParamRule::Standard),
            "jump" => Ok(ParamRule::Jump),
            other => parse_tagged_const(other)
                .unwrap_or(other)
                .parse::<f64>()
                .map(ParamRule::Const)
                .map_err(|_| Error::InvalidPlan(format!("unknown parameter rule {other:?}"))),
        }
    }
}

/// A noise rate, possibly depending on `n`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub enum NoiseRate {
    Fixed(f64),
    /// `q = ln(n)/n`
    LnNOverN,
    /// `q = 1/(6e)`
    OneOver6e,
}

impl NoiseRate {
    pub fn resolve(&self, n: usize) -> f64 {
        match self {
            NoiseRate::Fixed(q) => *q,
            NoiseRate::LnNOverN => (n as f64).ln() / n as f64,
            NoiseRate::OneOver6e => 1.0 / (6.0 * std::f64::consts::E),
        }
    }

    /// Recovers the symbolic rate that resolves to exactly `q` at size `n`.
    pub fn infer(n: usize, q: f64) -> NoiseRate {
        // ln(n)/n never equals 1/(6e) for integer n, so the order is immaterial
        if q == NoiseRate::OneOver6e.resolve(n) {
            NoiseRate::OneOver6e
        } else if n > 1 && q == NoiseRate::LnNOverN.resolve(n) {
            NoiseRate::LnNOverN
        } else {
            NoiseRate::Fixed(q)
        }
    }

    pub fn label(&self) -> String {
        match self {
            NoiseRate::Fixed(q) => format!("{q}"),
            NoiseRate::LnNOverN => "ln_n_over_n".into(),
            NoiseRate::OneOver6e => "one_over_6e".into(),
        }
    }
}

impl FromStr for NoiseRate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ln_n_over_n" => Ok(NoiseRate::LnNOverN),
            "one_over_6e" => Ok(NoiseRate::OneOver6e),
            other => other
                .parse::<f64>()
                .map(NoiseRate::Fixed)
                .map_err(|_| Error::InvalidPlan(format!("unknown noise rate {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NumberOrString {
    Number(f64),
    Text(String),
}

macro_rules! serde_via_text {
    ($ty:ty, $number:expr) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_string())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                match NumberOrString::deserialize(d)? {
                    NumberOrString::Text(t) => t.parse().map_err(serde::de::Error::custom),
                    NumberOrString::Number(v) => $number(v).map_err(serde::de::Error::custom),
                }
            }
        }
    };
}

serde_via_text!(LambdaRule, |v: f64| {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(LambdaRule::Const(v as usize))
    } else {
        Err(format!("lambda must be a non-negative integer, got {v}"))
    }
});
serde_via_text!(ParamRule, |v: f64| Ok::<_, String>(ParamRule::Const(v)));

impl fmt::Display for NoiseRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for NoiseRate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            NoiseRate::Fixed(q) => s.serialize_f64(*q),
            other => s.serialize_str(&other.label()),
        }
    }
}

impl<'de> Deserialize<'de> for NoiseRate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NumberOrString::deserialize(d)? {
            NumberOrString::Text(t) => t.parse().map_err(serde::de::Error::custom),
            NumberOrString::Number(v) => Ok(NoiseRate::Fixed(v)),
        }
    }
}

/// One algorithm column of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmTemplate {
    pub kind: AlgorithmKind,
    #[serde(default = "one_lambda")]
    pub lambda_rule: LambdaRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_rule: Option<ParamRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_rule: Option<ParamRule>,
}

fn one_lambda() -> LambdaRule {
    LambdaRule::Const(1)
}

impl AlgorithmTemplate {
    pub fn one_plus_one() -> Self {
        AlgorithmTemplate {
            kind: AlgorithmKind::OnePlusOneEa,
            lambda_rule: LambdaRule::Const(1),
            p_rule: None,
            c_rule: None,
        }
    }

    pub fn one_plus_lambda(lambda_rule: LambdaRule) -> Self {
        AlgorithmTemplate {
            kind: AlgorithmKind::OnePlusLambdaEa,
            lambda_rule,
            p_rule: None,
            c_rule: None,
        }
    }

    pub fn ollga(lambda_rule: LambdaRule, p_rule: ParamRule, c_rule: ParamRule) -> Self {
        AlgorithmTemplate {
            kind: AlgorithmKind::OnePlusLlGa,
            lambda_rule,
            p_rule: Some(p_rule),
            c_rule: Some(c_rule),
        }
    }

    fn validate(&self) -> Result<()> {
        match self.kind {
            AlgorithmKind::OnePlusOneEa if self.lambda_rule != LambdaRule::Const(1) => {
                Err(Error::InvalidPlan("one_plus_one_ea takes lambda_rule const:1".into()))
            }
            AlgorithmKind::OnePlusOneEa | AlgorithmKind::OnePlusLambdaEa if self.p_rule.is_some() || self.c_rule.is_some() => {
                Err(Error::InvalidPlan(format!("{} takes no p_rule or c_rule", self.kind)))
            }
            _ => Ok(()),
        }
    }

    /// Resolves λ, p and c on `problem`; the flag reports λ clamping.
    pub fn resolve(&self, problem: &ProblemSpec) -> Result<(AlgorithmSpec, bool)> {
        self.validate()?;
        let (lambda, clamped) = self.lambda_rule.resolve(problem)?;
        let spec = match self.kind {
            AlgorithmKind::OnePlusOneEa => AlgorithmSpec::one_plus_one(),
            AlgorithmKind::OnePlusLambdaEa => AlgorithmSpec::one_plus_lambda(lambda)?,
            AlgorithmKind::OnePlusLlGa => {
                let p = self.p_rule.unwrap_or(ParamRule::Standard).resolve(true, lambda, problem)?;
                let c = self.c_rule.unwrap_or(ParamRule::Standard).resolve(false, lambda, problem)?;
                AlgorithmSpec::ollga(lambda, p, c)
                    .map_err(|e| Error::InvalidPlan(format!("{} with lambda {lambda} on {problem}: {e}", self.label(NoiseKind::Bitwise))))?
            }
        };
        Ok((spec, clamped))
    }

    pub fn label(&self, noise: NoiseKind) -> AlgorithmLabel {
        AlgorithmLabel {
            kind: self.kind,
            lambda_rule: self.lambda_rule,
            p_rule: self.kind.is_ga().then(|| self.p_rule.unwrap_or(ParamRule::Standard)),
            c_rule: self.kind.is_ga().then(|| self.c_rule.unwrap_or(ParamRule::Standard)),
            one_bit_noise: noise == NoiseKind::OneBit,
        }
    }
}

/// Identity of an algorithm setting as written to the `algorithm` CSV column.
///
/// Format: `kind/lambda_rule` for the EAs, `kind/lambda_rule/p_rule/c_rule`
/// for the GA, with `@one_bit` appended under one-bit noise.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct AlgorithmLabel {
    pub kind: AlgorithmKind,
    pub lambda_rule: LambdaRule,
    pub p_rule: Option<ParamRule>,
    pub c_rule: Option<ParamRule>,
    pub one_bit_noise: bool,
}

impl AlgorithmLabel {
    /// The label without its λ rule.
    pub fn setting_name(&self) -> String {
        let mut s = self.kind.name().to_string();
        if let (Some(p), Some(c)) = (self.p_rule, self.c_rule) {
            s.push_str(&format!("/{p}/{c}"));
        }
        if self.one_bit_noise {
            s.push_str("@one_bit");
        }
        s
    }
}

impl fmt::Display for AlgorithmLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind, self.lambda_rule)?;
        if let (Some(p), Some(c)) = (self.p_rule, self.c_rule) {
            write!(f, "/{p}/{c}")?;
        }
        if self.one_bit_noise {
            f.write_str("@one_bit")?;
        }
        Ok(())
    }
}

impl FromStr for AlgorithmLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (body, one_bit_noise) = match s.strip_suffix("@one_bit") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let parts: Vec<&str> = body.split('/').collect();
        let bad = || Error::Parse(format!("malformed algorithm label {s:?}"));
        let kind = AlgorithmKind::parse(parts.first().ok_or_else(bad)?).map_err(|_| bad())?;
        let lambda_rule: LambdaRule = parts.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let (p_rule, c_rule) = match (kind.is_ga(), parts.len()) {
            (true, 4) => (
                Some(parts[2].parse().map_err(|_| bad())?),
                Some(parts[3].parse().map_err(|_| bad())?),
            ),
            (false, 2) => (None, None),
            _ => return Err(bad()),
        };
        Ok(AlgorithmLabel {
            kind,
            lambda_rule,
            p_rule,
            c_rule,
            one_bit_noise,
        })
    }
}

/// One noise column of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSetting {
    pub kind: NoiseKind,
    #[serde(default = "zero_rate")]
    pub q: NoiseRate,
}

fn zero_rate() -> NoiseRate {
    NoiseRate::Fixed(0.0)
}

impl NoiseSetting {
    pub fn bitwise(q: NoiseRate) -> Self {
        NoiseSetting {
            kind: NoiseKind::Bitwise,
            q,
        }
    }

    pub fn resolve(&self, n: usize) -> Result<NoiseModel> {
        let model = NoiseModel::new(self.kind, self.q.resolve(n))?;
        model.validate_for(n)?;
        Ok(model)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    NLnN,
    NSquared,
}

impl Normalization {
    pub fn divisor(&self, n: usize) -> f64 {
        let n = n as f64;
        match self {
            Normalization::None => 1.0,
            Normalization::NLnN => n * n.ln(),
            Normalization::NSquared => n * n,
        }
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "n_ln_n" => Ok(Normalization::NLnN),
            "n_squared" => Ok(Normalization::NSquared),
            other => Err(Error::invalid(format!("unknown normalization {other:?}"))),
        }
    }
}

fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

/// A grid of settings, each replicated with its own derived seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub id: String,
    pub problems: Vec<ProblemSpec>,
    pub algorithms: Vec<AlgorithmTemplate>,
    pub noise: Vec<NoiseSetting>,
    pub replications: u64,
    pub master_seed: u64,
    #[serde(default = "default_budget")]
    pub budget: u64,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub count_parent_reeval: bool,
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_str(text).map_err(|e| Error::InvalidPlan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans always serialize")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidPlan(msg) => Error::InvalidPlan(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() || self.id.contains(',') {
            return Err(Error::InvalidPlan("id must be non-empty and contain no commas".into()));
        }
        if self.replications < 1 {
            return Err(Error::InvalidPlan("replications must be at least 1".into()));
        }
        if self.budget < 1 {
            return Err(Error::InvalidPlan("budget must be at least 1".into()));
        }
        for (name, empty) in [
            ("problems", self.problems.is_empty()),
            ("algorithms", self.algorithms.is_empty()),
            ("noise", self.noise.is_empty()),
        ] {
            if empty {
                return Err(Error::InvalidPlan(format!("{name} grid is empty")));
            }
        }
        expand(self).map(|_| ())
    }

    pub fn trial_count(&self) -> u64 {
        (self.problems.len() * self.algorithms.len() * self.noise.len()) as u64 * self.replications
    }

    /// Shrunk copy for quick reproduction: at most `max_replications` runs and
    /// problem sizes capped per benchmark (OneMax 512, LeadingOnes 128, Jump 32).
    pub fn desk_scaled(&self, max_replications: u64) -> ExperimentPlan {
        let mut plan = self.clone();
        plan.replications = plan.replications.min(max_replications);
        plan.problems.retain(|p| {
            p.n() <= match p.kind() {
                ProblemKind::OneMax => 512,
                ProblemKind::LeadingOnes => 128,
                ProblemKind::Jump => 32,
            }
        });
        if plan.problems.is_empty() {
            if let Some(smallest) = self.problems.iter().min_by_key(|p| p.n()) {
                plan.problems.push(*smallest);
            }
        }
        plan
    }
}

/// A fully resolved trial.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialConfig {
    pub plan_id: String,
    pub trial: u64,
    pub seed: u64,
    pub problem: ProblemSpec,
    pub algorithm: AlgorithmSpec,
    pub label: AlgorithmLabel,
    pub noise: NoiseModel,
    pub options: RunOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub trials: Vec<TrialConfig>,
    /// One entry per setting whose λ rule was clamped up to 1.
    pub warnings: Vec<String>,
}

/// Cartesian product problems × algorithms × noise × replications, in that
/// nesting order; trial `i` gets seed `derive_seed(master_seed, i)`.
pub fn expand(plan: &ExperimentPlan) -> Result<Expansion> {
    let mut trials = Vec::with_capacity(plan.trial_count() as usize);
    let mut warnings = Vec::new();
    let options = RunOptions {
        budget: plan.budget,
        count_parent_reeval: plan.count_parent_reeval,
    };
    let mut index = 0u64;
    for problem in &plan.problems {
        for template in &plan.algorithms {
            let (algorithm, clamped) = template.resolve(problem)?;
            if clamped {
                warnings.push(format!(
                    "lambda rule {} gives lambda < 1 on {problem}; clamped to 1",
                    template.lambda_rule
                ));
            }
            for setting in &plan.noise {
                let noise = setting
                    .resolve(problem.n())
                    .map_err(|e| Error::InvalidPlan(format!("noise {} on {problem}: {e}", setting.q)))?;
                let label = template.label(setting.kind);
                for _ in 0..plan.replications {
                    trials.push(TrialConfig {
                        plan_id: plan.id.clone(),
                        trial: index,
                        seed: derive_seed(plan.master_seed, index),
                        problem: *problem,
                        algorithm,
                        label,
                        noise,
                        options,
                    });
                    index += 1;
                }
            }
        }
    }
    Ok(Expansion { trials, warnings })
}

/// Outcome of one trial, as persisted in the results CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub plan_id: String,
    pub problem: ProblemKind,
    pub n: usize,
    pub k: Option<usize>,
    pub algorithm: AlgorithmLabel,
    pub lambda: usize,
    pub p: Option<f64>,
    pub c: Option<f64>,
    pub q: f64,
    pub trial: u64,
    pub seed: u64,
    pub evaluations: u64,
    pub iterations: u64,
    pub done: bool,
    pub censored: bool,
    pub wall_ms: f64,
}

impl TrialRecord {
    /// Neither finished nor censored: the trial errored out.
    pub fn is_failed(&self) -> bool {
        !self.done && !self.censored
    }

    fn csv_fields(&self) -> [String; 16] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.plan_id.clone(),
            self.problem.name().to_string(),
            self.n.to_string(),
            self.k.map(|k| k.to_string()).unwrap_or_default(),
            self.algorithm.to_string(),
            self.lambda.to_string(),
            opt(self.p),
            opt(self.c),
            self.q.to_string(),
            self.trial.to_string(),
            self.seed.to_string(),
            self.evaluations.to_string(),
            self.iterations.to_string(),
            self.done.to_string(),
            self.censored.to_string(),
            self.wall_ms.to_string(),
        ]
    }

    fn from_csv_fields(row: &csv::StringRecord) -> Result<Self> {
        if row.len() != RESULTS_HEADER.len() {
            return Err(Error::Parse(format!("expected {} fields, got {}", RESULTS_HEADER.len(), row.len())));
        }
        fn num<T: FromStr>(row: &csv::StringRecord, i: usize) -> Result<T> {
            row[i]
                .parse()
                .map_err(|_| Error::Parse(format!("bad {} value {:?}", RESULTS_HEADER[i], &row[i])))
        }
        fn opt<T: FromStr>(row: &csv::StringRecord, i: usize) -> Result<Option<T>> {
            if row[i].is_empty() {
                Ok(None)
            } else {
                num(row, i).map(Some)
            }
        }
        Ok(TrialRecord {
            plan_id: row[0].to_string(),
            problem: ProblemKind::parse(&row[1]).map_err(|e| Error::Parse(e.to_string()))?,
            n: num(row, 2)?,
            k: opt(row, 3)?,
            algorithm: row[4].parse()?,
            lambda: num(row, 5)?,
            p: opt(row, 6)?,
            c: opt(row, 7)?,
            q: num(row, 8)?,
            trial: num(row, 9)?,
            seed: num(row, 10)?,
            evaluations: num(row, 11)?,
            iterations: num(row, 12)?,
            done: num(row, 13)?,
            censored: num(row, 14)?,
            wall_ms: num(row, 15)?,
        })
    }
}

/// Runs one trial; a panic inside the run becomes a failed record.
pub fn run_trial(config: &TrialConfig) -> TrialRecord {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        algorithms::run(&config.problem, &config.algorithm, &config.noise, config.seed, config.options)
    }));
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let mut record = TrialRecord {
        plan_id: config.plan_id.clone(),
        problem: config.problem.kind(),
        n: config.problem.n(),
        k: config.problem.gap(),
        algorithm: config.label,
        lambda: config.algorithm.lambda(),
        p: config.algorithm.mutation_rate(),
        c: config.algorithm.crossover_bias(),
        q: config.noise.q(),
        trial: config.trial,
        seed: config.seed,
        evaluations: 0,
        iterations: 0,
        done: false,
        censored: false,
        wall_ms,
    };
    match outcome {
        Ok(Ok(out)) => {
            record.evaluations = out.evaluations;
            record.iterations = out.iterations;
            record.done = out.done;
            record.censored = out.censored;
        }
        Ok(Err(e)) => log::error!("trial {} failed: {e}", config.trial),
        Err(_) => log::error!("trial {} panicked", config.trial),
    }
    record
}

/// Runs `trials` on `workers` threads, calling `on_record` as each finishes.
/// The result is sorted by trial index.
pub fn execute_trials(
    trials: &[TrialConfig],
    workers: usize,
    on_record: &(dyn Fn(&TrialRecord) + Sync),
) -> Result<Vec<TrialRecord>> {
    if workers < 1 {
        return Err(Error::invalid("workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let mut records: Vec<TrialRecord> = pool.install(|| {
        trials
            .par_iter()
            .map(|t| {
                let r = run_trial(t);
                on_record(&r);
                r
            })
            .collect()
    });
    records.sort_by_key(|r| r.trial);
    Ok(records)
}

pub fn execute(plan: &ExperimentPlan, workers: usize) -> Result<Vec<TrialRecord>> {
    let expansion = expand(plan)?;
    for w in &expansion.warnings {
        log::warn!("{w}");
    }
    execute_trials(&expansion.trials, workers, &|_| {})
}

/// Like [`execute`], but appends every finished record to `journal` and skips
/// trials of the same plan already recorded there.
pub fn execute_resumable(plan: &ExperimentPlan, workers: usize, journal: &Path) -> Result<Vec<TrialRecord>> {
    let mut previous = Vec::new();
    if journal.exists() {
        let file = File::open(journal)?;
        previous = read_records_lenient(file)?
            .into_iter()
            .filter(|r| r.plan_id == plan.id)
            .collect();
    }
    let have: HashSet<u64> = previous.iter().map(|r| r.trial).collect();
    let expansion = expand(plan)?;
    for w in &expansion.warnings {
        log::warn!("{w}");
    }
    let pending: Vec<TrialConfig> = expansion.trials.into_iter().filter(|t| !have.contains(&t.trial)).collect();

    let fresh = !journal.exists() || std::fs::metadata(journal)?.len() == 0;
    let mut file = OpenOptions::new().create(true).append(true).open(journal)?;
    if fresh {
        writeln!(file, "{}", RESULTS_HEADER.join(","))?;
    }
    let sink = Mutex::new(csv::WriterBuilder::new().has_headers(false).from_writer(file));
    let write_err = Mutex::new(None);
    let mut records = execute_trials(&pending, workers, &|r| {
        let mut w = sink.lock().expect("journal lock");
        if let Err(e) = w.write_record(r.csv_fields()).and_then(|_| w.flush().map_err(Into::into)) {
            write_err.lock().expect("error lock").get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err.into_inner().expect("error lock") {
        return Err(e.into());
    }
    records.extend(previous);
    records.sort_by_key(|r| r.trial);
    Ok(records)
}

/// Writes records sorted by trial index under the exact results header.
pub fn write_records_csv<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.trial);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for r in sorted {
        w.write_record(r.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(Error::Parse(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    reader
        .records()
        .enumerate()
        .map(|(i, row)| TrialRecord::from_csv_fields(&row?).map_err(|e| Error::Parse(format!("row {}: {e}", i + 2))))
        .collect()
}

/// Journal reader: a torn final line from an interrupted run is dropped.
fn read_records_lenient<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    Ok(reader
        .records()
        .filter_map(|row| row.ok().and_then(|r| TrialRecord::from_csv_fields(&r).ok()))
        .collect())
}

/// Per-group summary of runtimes. Censored and failed trials are excluded
/// from the mean and standard deviation but reported.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub completed: usize,
    pub censored: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n - 1 denominator); absent below two completed trials.
    pub std: Option<f64>,
    pub mean_normalized: Option<f64>,
    pub std_normalized: Option<f64>,
}

pub fn mean_and_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let len = values.len() as f64;
    let mean = values.iter().sum::<f64>() / len;
    let std = (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1.0)).sqrt());
    (Some(mean), std)
}

fn summarize(records: &[&TrialRecord], normalization: Normalization) -> Summary {
    let mut values: Vec<f64> = records.iter().filter(|r| r.done).map(|r| r.evaluations as f64).collect();
    // summation order must not depend on record order
    values.sort_by(f64::total_cmp);
    let (mean, std) = mean_and_std(&values);
    let first_n = records.first().map(|r| r.n);
    let divisor = first_n
        .filter(|&n| records.iter().all(|r| r.n == n))
        .map(|n| normalization.divisor(n));
    Summary {
        count: records.len(),
        completed: values.len(),
        censored: records.iter().filter(|r| r.censored).count(),
        failed: records.iter().filter(|r| r.is_failed()).count(),
        mean,
        std,
        mean_normalized: mean.zip(divisor).map(|(m, d)| m / d),
        std_normalized: std.zip(divisor).map(|(s, d)| s / d),
    }
}

/// Groups records by `key` and summarizes each group.
pub fn aggregate<K: Ord>(
    records: &[TrialRecord],
    key: impl Fn(&TrialRecord) -> K,
    normalization: Normalization,
) -> BTreeMap<K, Summary> {
    let mut groups: BTreeMap<K, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(key(r)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| (k, summarize(&rs, normalization)))
        .collect()
}

/// Everything that identifies a setting except its size `n` and noise rate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CurveKey {
    pub plan_id: String,
    pub problem: ProblemKind,
    pub k: Option<usize>,
    pub algorithm: String,
    pub lambda_rule: String,
}

impl CurveKey {
    pub fn of(r: &TrialRecord) -> Self {
        CurveKey {
            plan_id: r.plan_id.clone(),
            problem: r.problem,
            k: r.k,
            algorithm: r.algorithm.setting_name(),
            lambda_rule: r.algorithm.lambda_rule.to_string(),
        }
    }
}

/// A setting at one size and noise rate, with `q` in symbolic form where possible.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SettingKey {
    pub curve: CurveKey,
    pub q: String,
    pub n: usize,
}

impl SettingKey {
    pub fn of(r: &TrialRecord) -> Self {
        SettingKey {
            curve: CurveKey::of(r),
            q: NoiseRate::infer(r.n, r.q).label(),
            n: r.n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            id: "t".into(),
            problems: vec![ProblemSpec::onemax(16).unwrap(), ProblemSpec::jump(8, 3).unwrap()],
            algorithms: vec![
                AlgorithmTemplate::one_plus_one(),
                AlgorithmTemplate::one_plus_lambda(LambdaRule::LnN),
                AlgorithmTemplate::ollga(LambdaRule::Const(3), ParamRule::Standard, ParamRule::Standard),
            ],
            noise: vec![
                NoiseSetting::bitwise(NoiseRate::Fixed(0.0)),
                NoiseSetting::bitwise(NoiseRate::LnNOverN),
                NoiseSetting::bitwise(NoiseRate::OneOver6e),
                NoiseSetting::bitwise(NoiseRate::Fixed(1.0)),
            ],
            replications: 100,
            master_seed: 42,
            budget: 1_000_000,
            normalization: Normalization::None,
            count_parent_reeval: false,
        }
    }

    fn record(evals: u64, done: bool, n: usize) -> TrialRecord {
        TrialRecord {
            plan_id: "x".into(),
            problem: ProblemKind::OneMax,
            n,
            k: None,
            algorithm: AlgorithmTemplate::one_plus_one().label(NoiseKind::Bitwise),
            lambda: 1,
            p: None,
            c: None,
            q: 0.0,
            trial: evals,
            seed: 0,
            evaluations: evals,
            iterations: evals,
            done,
            censored: !done,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn expansion_size_and_determinism() {
        let plan = small_plan();
        let e = expand(&plan).unwrap();
        assert_eq!(e.trials.len(), 2 * 3 * 4 * 100);
        assert_eq!(e.trials, expand(&plan).unwrap().trials);
        assert!(e.trials.iter().enumerate().all(|(i, t)| t.trial == i as u64 && t.seed == derive_seed(42, i as u64)));
    }

    #[test]
    fn lambda_sweep_plan_size() {
        let q = [NoiseRate::Fixed(0.0), NoiseRate::LnNOverN, NoiseRate::OneOver6e];
        let plan = ExperimentPlan {
            id: "sweep".into(),
            problems: vec![ProblemSpec::onemax(128).unwrap(), ProblemSpec::onemax(1024).unwrap()],
            algorithms: (2..=30).map(|l| AlgorithmTemplate::one_plus_lambda(LambdaRule::Const(l))).collect(),
            noise: q.iter().map(|&r| NoiseSetting::bitwise(r)).collect(),
            replications: 128,
            master_seed: 1,
            budget: 10,
            normalization: Normalization::NLnN,
            count_parent_reeval: false,
        };
        assert_eq!(expand(&plan).unwrap().trials.len(), 22272);
    }

    #[test]
    fn lambda_rules() {
        let om = ProblemSpec::onemax(1024).unwrap();
        assert_eq!(LambdaRule::LnN.resolve(&om).unwrap(), (7, false));
        assert_eq!(LambdaRule::HalfLnN.resolve(&om).unwrap(), (3, false));
        assert_eq!(LambdaRule::SqrtN.resolve(&om).unwrap(), (32, false));
        assert_eq!(LambdaRule::HalfN.resolve(&om).unwrap(), (512, false));
        let j = |n| ProblemSpec::jump(n, 3).unwrap();
        assert_eq!(LambdaRule::JumpHeavy.resolve(&j(8)).unwrap(), (2, false));
        assert_eq!(LambdaRule::JumpHeavy.resolve(&j(32)).unwrap(), (6, false));
        assert_eq!(LambdaRule::JumpHeavy.resolve(&j(64)).unwrap(), (12, false));
        assert!(LambdaRule::JumpHeavy.resolve(&om).is_err());
        assert_eq!(LambdaRule::HalfLnN.resolve(&ProblemSpec::onemax(1).unwrap()).unwrap(), (1, true));
        assert_eq!(LambdaRule::Const(0).resolve(&om).unwrap(), (1, true));
    }

    #[test]
    fn clamping_is_reported() {
        let mut plan = small_plan();
        plan.problems = vec![ProblemSpec::onemax(2).unwrap()];
        plan.algorithms = vec![AlgorithmTemplate::one_plus_lambda(LambdaRule::HalfLnN)];
        let e = expand(&plan).unwrap();
        assert_eq!(e.warnings.len(), 1);
        assert!(e.trials.iter().all(|t| t.algorithm.lambda() == 1));
    }

    #[test]
    fn invalid_plans() {
        let mut plan = small_plan();
        plan.replications = 0;
        assert!(plan.validate().is_err());
        let mut plan = small_plan();
        plan.noise.clear();
        assert!(plan.validate().is_err());
        let mut plan = small_plan();
        plan.algorithms.push(AlgorithmTemplate::one_plus_lambda(LambdaRule::JumpHeavy));
        assert!(plan.validate().is_err());
        let mut plan = small_plan();
        plan.noise.push(NoiseSetting::bitwise(NoiseRate::Fixed(100.0)));
        assert!(plan.validate().is_err());
        assert!(small_plan().validate().is_ok());
    }

    #[test]
    fn plan_json_round_trip_and_symbols() {
        let plan = small_plan();
        assert_eq!(ExperimentPlan::from_json(&plan.to_json()).unwrap(), plan);
        let text = r#"{"id":"p","problems":[{"kind":"jump","n":8,"k":3}],
            "algorithms":[{"kind":"one_plus_ll_ga","lambda_rule":"jump_heavy","p_rule":"jump","c_rule":"jump"},
                          {"kind":"one_plus_lambda_ea","lambda_rule":4}],
            "noise":[{"kind":"bitwise","q":"1"},{"kind":"bitwise","q":"ln_n_over_n"},{"kind":"none","q":0}],
            "replications":2,"master_seed":7}"#;
        let p = ExperimentPlan::from_json(text).unwrap();
        assert_eq!(p.noise[0].q, NoiseRate::Fixed(1.0));
        assert_eq!(p.algorithms[1].lambda_rule, LambdaRule::Const(4));
        assert_eq!(p.budget, DEFAULT_BUDGET);
        assert!(!p.count_parent_reeval);
        assert_eq!(ExperimentPlan::from_json(&p.to_json()).unwrap(), p);
        let unknown = text.replace("\"master_seed\":7", "\"master_seed\":7,\"extra\":1");
        assert!(ExperimentPlan::from_json(&unknown).is_err());
        let missing = text.replace(",\"master_seed\":7", "");
        assert!(ExperimentPlan::from_json(&missing).is_err());
    }

    #[test]
    fn label_round_trip() {
        for t in small_plan().algorithms {
            for kind in [NoiseKind::Bitwise, NoiseKind::OneBit] {
                let label = t.label(kind);
                assert_eq!(label.to_string().parse::<AlgorithmLabel>().unwrap(), label);
            }
        }
        assert!("one_plus_ll_ga/ln_n".parse::<AlgorithmLabel>().is_err());
        assert!("one_plus_lambda_ea/ln_n/standard/standard".parse::<AlgorithmLabel>().is_err());
    }

    #[test]
    fn noise_rate_inference() {
        for n in [8usize, 16, 128, 1024] {
            for rate in [NoiseRate::Fixed(0.0), NoiseRate::Fixed(1.0), NoiseRate::LnNOverN, NoiseRate::OneOver6e] {
                let q: f64 = rate.resolve(n).to_string().parse().unwrap();
                assert_eq!(NoiseRate::infer(n, q), rate);
            }
        }
    }

    #[test]
    fn aggregate_examples() {
        let recs = vec![record(2, true, 8), record(4, true, 8), record(6, true, 8)];
        let s = &aggregate(&recs, |_| (), Normalization::None)[&()];
        assert_eq!(s.mean, Some(4.0));
        assert_eq!(s.std, Some(2.0));

        let censored = vec![record(10, false, 8), record(11, false, 8)];
        let s = &aggregate(&censored, |_| (), Normalization::None)[&()];
        assert_eq!(s.mean, None);
        assert_eq!(s.censored, 2);
        assert_eq!(s.completed, 0);

        let single = vec![record(5, true, 8)];
        assert_eq!(aggregate(&single, |_| (), Normalization::None)[&()].std, None);

        let big = vec![record(1000, true, 1024), record(3000, true, 1024)];
        let s = &aggregate(&big, |_| (), Normalization::NLnN)[&()];
        assert_eq!(s.mean_normalized, Some(2000.0 / (1024.0 * 1024f64.ln())));
    }

    #[test]
    fn aggregate_is_order_independent() {
        let mut recs: Vec<TrialRecord> = (1..50).map(|i| record(i * 37 % 101, i % 7 != 0, 16)).collect();
        let a = aggregate(&recs, |r| r.n, Normalization::NSquared);
        recs.reverse();
        recs.swap(3, 20);
        assert_eq!(a, aggregate(&recs, |r| r.n, Normalization::NSquared));
    }

    #[test]
    fn csv_round_trip_and_header() {
        let plan = ExperimentPlan {
            replications: 3,
            ..small_plan()
        };
        let recs = execute(&plan, 2).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), RESULTS_HEADER.join(","));
        assert!(text.lines().nth(1).unwrap().starts_with("t,onemax,16,,one_plus_one_ea/const:1,1,,,0,0,"));
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn tiny_budget_censors_everything() {
        let plan = ExperimentPlan {
            problems: vec![ProblemSpec::jump(64, 3).unwrap()],
            algorithms: vec![AlgorithmTemplate::one_plus_one(), AlgorithmTemplate::ollga(LambdaRule::JumpHeavy, ParamRule::Jump, ParamRule::Jump)],
            replications: 10,
            budget: 10,
            ..small_plan()
        };
        let recs = execute(&plan, 1).unwrap();
        assert!(recs.iter().all(|r| r.censored && !r.done && r.evaluations == 10));
    }

    #[test]
    fn resumes_from_journal() {
        let dir = tempfile::tempdir().unwrap();
        let journal = dir.path().join("run.journal");
        let plan = ExperimentPlan {
            replications: 2,
            ..small_plan()
        };
        let full = execute(&plan, 1).unwrap();
        // pretend the first half finished before an interruption
        let half = &full[..full.len() / 2];
        let mut buf = Vec::new();
        write_records_csv(half, &mut buf).unwrap();
        buf.extend_from_slice(b"t,onemax,16,,one_plus"); // torn line
        std::fs::write(&journal, buf).unwrap();
        let resumed = execute_resumable(&plan, 1, &journal).unwrap();
        let strip = |rs: &[TrialRecord]| rs.iter().map(|r| (r.trial, r.seed, r.evaluations, r.done)).collect::<Vec<_>>();
        assert_eq!(strip(&resumed), strip(&full));
    }
}
