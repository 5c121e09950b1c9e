//! The (1+1) EA, the (1+λ) EA and the (1+(λ,λ)) GA.
//!
//! All three keep a single parent, re-evaluate it (with fresh noise) every
//! iteration, and accept the selected offspring when its noisy fitness is at
//! least the parent's. A run ends once the accepted parent is the true optimum.
//!
//! Draw order inside one iteration:
//! * EA: for each offspring in index order, its mutation then its noisy
//!   evaluation; the tie-break among best offspring; the parent evaluation.
//! * GA: `ℓ`; for each mutation offspring, its `ℓ` positions then its
//!   evaluation; the mutation-winner tie-break; for each crossover offspring,
//!   its crossover mask then its evaluation; the crossover-winner tie-break;
//!   the parent evaluation.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{Fitness, ProblemSpec};
use crate::bitvec::{binomial_draws, random_bitstring, BernoulliPositions, BitString, IndexSampler, RandomStream};
use crate::error::{Error, Result};
use crate::noise::{BudgetExhausted, NoiseModel, NoisyEvaluator};

/// Default per-trial evaluation budget.
pub const DEFAULT_BUDGET: u64 = 1_000_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    OnePlusOneEa,
    OnePlusLambdaEa,
    OnePlusLlGa,
}

impl AlgorithmKind {
    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::OnePlusOneEa => "one_plus_one_ea",
            AlgorithmKind::OnePlusLambdaEa => "one_plus_lambda_ea",
            AlgorithmKind::OnePlusLlGa => "one_plus_ll_ga",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "one_plus_one_ea" => Ok(AlgorithmKind::OnePlusOneEa),
            "one_plus_lambda_ea" => Ok(AlgorithmKind::OnePlusLambdaEa),
            "one_plus_ll_ga" => Ok(AlgorithmKind::OnePlusLlGa),
            other => Err(Error::invalid(format!("unknown algorithm {other:?}"))),
        }
    }

    pub fn is_ga(self) -> bool {
        self == AlgorithmKind::OnePlusLlGa
    }
}

impl fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Algorithm identity with its resolved parameters.
///
/// `mutation_rate` and `crossover_bias` are only meaningful for the GA; the EAs
/// always use standard bit mutation with rate `1/n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlgorithmSpec {
    kind: AlgorithmKind,
    lambda: usize,
    mutation_rate: f64,
    crossover_bias: f64,
}

impl AlgorithmSpec {
    pub fn one_plus_one() -> Self {
        AlgorithmSpec {
            kind: AlgorithmKind::OnePlusOneEa,
            lambda: 1,
            mutation_rate: 0.0,
            crossover_bias: 0.0,
        }
    }

    pub fn one_plus_lambda(lambda: usize) -> Result<Self> {
        if lambda < 1 {
            return Err(Error::invalid("population size must be at least 1"));
        }
        Ok(AlgorithmSpec {
            kind: AlgorithmKind::OnePlusLambdaEa,
            lambda,
            mutation_rate: 0.0,
            crossover_bias: 0.0,
        })
    }

    pub fn ollga(lambda: usize, mutation_rate: f64, crossover_bias: f64) -> Result<Self> {
        if lambda < 1 {
            return Err(Error::invalid("population size must be at least 1"));
        }
        if !(mutation_rate > 0.0 && mutation_rate <= 1.0) {
            return Err(Error::invalid(format!("mutation rate {mutation_rate} outside (0, 1]")));
        }
        if !(0.0..=1.0).contains(&crossover_bias) {
            return Err(Error::invalid(format!("crossover bias {crossover_bias} outside [0, 1]")));
        }
        Ok(AlgorithmSpec {
            kind: AlgorithmKind::OnePlusLlGa,
            lambda,
            mutation_rate,
            crossover_bias,
        })
    }

    /// `p = λ/n`, `c = 1/λ`.
    pub fn ollga_standard(lambda: usize, n: usize) -> Result<Self> {
        Self::ollga(lambda, lambda as f64 / n as f64, 1.0 / lambda as f64)
    }

    /// `p = c = sqrt(k/n)`, the regime tuned for Jump_k.
    pub fn ollga_jump(lambda: usize, n: usize, k: usize) -> Result<Self> {
        let r = (k as f64 / n as f64).sqrt();
        Self::ollga(lambda, r, r)
    }

    pub fn new(kind: AlgorithmKind, lambda: usize, p: Option<f64>, c: Option<f64>) -> Result<Self> {
        match kind {
            AlgorithmKind::OnePlusOneEa if lambda == 1 => Ok(Self::one_plus_one()),
            AlgorithmKind::OnePlusOneEa => Err(Error::invalid("the (1+1) EA has lambda = 1")),
            AlgorithmKind::OnePlusLambdaEa => Self::one_plus_lambda(lambda),
            AlgorithmKind::OnePlusLlGa => match (p, c) {
                (Some(p), Some(c)) => Self::ollga(lambda, p, c),
                _ => Err(Error::invalid("the GA needs a mutation rate p and a crossover bias c")),
            },
        }
    }

    pub fn kind(&self) -> AlgorithmKind {
        self.kind
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    /// GA mutation rate `p`; `None` for the EAs.
    pub fn mutation_rate(&self) -> Option<f64> {
        self.kind.is_ga().then_some(self.mutation_rate)
    }

    /// GA crossover bias `c`; `None` for the EAs.
    pub fn crossover_bias(&self) -> Option<f64> {
        self.kind.is_ga().then_some(self.crossover_bias)
    }

    /// Counted evaluations charged per complete iteration.
    pub fn evaluations_per_iteration(&self, count_parent_reeval: bool) -> u64 {
        let offspring = if self.kind.is_ga() { 2 * self.lambda } else { self.lambda };
        offspring as u64 + u64::from(count_parent_reeval)
    }
}

/// Options shared by every run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Maximum number of counted evaluations.
    pub budget: u64,
    /// Whether the per-iteration parent re-evaluation counts towards the runtime.
    pub count_parent_reeval: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            budget: DEFAULT_BUDGET,
            count_parent_reeval: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunState {
    pub x: BitString,
    pub iterations: u64,
    pub evaluations: u64,
    pub done: bool,
    pub censored: bool,
}

/// Outcome of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOutcome {
    pub seed: u64,
    pub evaluations: u64,
    pub iterations: u64,
    pub done: bool,
    pub censored: bool,
}

/// Index of a maximal value, ties broken uniformly with a single draw.
pub(crate) fn select_best<R: Rng + ?Sized>(values: &[Fitness], rng: &mut R) -> usize {
    let best = *values.iter().max().expect("at least one candidate");
    let ties = values.iter().filter(|&&v| v == best).count();
    let pick = if ties > 1 { rng.random_range(0..ties) } else { 0 };
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v == best)
        .nth(pick)
        .map(|(i, _)| i)
        .expect("pick < ties")
}

/// One optimizer instance: algorithm, evaluator, current state and scratch buffers.
pub struct Optimizer {
    spec: AlgorithmSpec,
    evaluator: NoisyEvaluator,
    options: RunOptions,
    state: RunState,
    offspring: Vec<BitString>,
    values: Vec<Fitness>,
    flip_sets: Vec<Vec<usize>>,
    mutation: BernoulliPositions,
    sampler: IndexSampler,
    crossover_values: Vec<Fitness>,
}

impl Optimizer {
    /// Starts from a uniformly random string drawn from `rng`.
    pub fn new<R: Rng + ?Sized>(
        problem: ProblemSpec,
        spec: AlgorithmSpec,
        noise: NoiseModel,
        options: RunOptions,
        rng: &mut R,
    ) -> Result<Self> {
        let x = random_bitstring(problem.n(), rng)?;
        Self::from_individual(problem, spec, noise, options, x)
    }

    pub fn from_individual(
        problem: ProblemSpec,
        spec: AlgorithmSpec,
        noise: NoiseModel,
        options: RunOptions,
        x: BitString,
    ) -> Result<Self> {
        if options.budget < 1 {
            return Err(Error::invalid("budget must be at least 1"));
        }
        if x.len() != problem.n() {
            return Err(Error::invalid("individual length differs from problem size"));
        }
        let n = problem.n();
        let evaluator = NoisyEvaluator::new(problem, noise, options.count_parent_reeval)?.with_budget(options.budget);
        let done = problem.is_optimum(&x);
        Ok(Optimizer {
            spec,
            evaluator,
            options,
            state: RunState {
                x,
                iterations: 0,
                evaluations: 0,
                done,
                censored: false,
            },
            offspring: vec![BitString::zeros(n); spec.lambda()],
            values: Vec::with_capacity(spec.lambda()),
            flip_sets: vec![Vec::new(); spec.lambda()],
            mutation: BernoulliPositions::new(n, 1.0 / n as f64),
            sampler: IndexSampler::new(n),
            crossover_values: Vec::with_capacity(spec.lambda()),
        })
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn spec(&self) -> &AlgorithmSpec {
        &self.spec
    }

    pub fn is_finished(&self) -> bool {
        self.state.done || self.state.censored
    }

    /// Runs one iteration. Hitting the budget mid-iteration censors the run.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        debug_assert!(!self.is_finished());
        let result = if self.spec.kind().is_ga() {
            self.ga_iteration(rng)
        } else {
            self.ea_iteration(rng)
        };
        self.state.evaluations = self.evaluator.evaluations();
        match result {
            Ok(()) => {
                self.state.iterations += 1;
                if !self.state.done && self.state.evaluations >= self.options.budget {
                    self.state.censored = true;
                }
            }
            Err(BudgetExhausted) => self.state.censored = true,
        }
    }

    fn accept(&mut self, from_offspring: usize) {
        std::mem::swap(&mut self.state.x, &mut self.offspring[from_offspring]);
        self.state.done = self.evaluator.problem().is_optimum(&self.state.x);
    }

    fn ea_iteration<R: Rng + ?Sized>(&mut self, rng: &mut R) -> std::result::Result<(), BudgetExhausted> {
        self.values.clear();
        let flips = &mut self.flip_sets[0];
        for child in self.offspring.iter_mut() {
            child.copy_from(&self.state.x);
            self.mutation.sample_into(rng, flips);
            for &i in flips.iter() {
                child.flip(i);
            }
            self.values.push(self.evaluator.eval_counted(child, rng)?);
        }
        let best = select_best(&self.values, rng);
        let parent = self.evaluator.eval_parent(&self.state.x, rng)?;
        if self.values[best] >= parent {
            self.accept(best);
        }
        Ok(())
    }

    fn ga_iteration<R: Rng + ?Sized>(&mut self, rng: &mut R) -> std::result::Result<(), BudgetExhausted> {
        let n = self.evaluator.problem().n();
        let ell = binomial_draws(n, self.spec.mutation_rate, rng);

        self.values.clear();
        for (child, flips) in self.offspring.iter_mut().zip(self.flip_sets.iter_mut()) {
            child.copy_from(&self.state.x);
            self.sampler.sample_into(ell, rng, flips);
            for &i in flips.iter() {
                child.flip(i);
            }
            self.values.push(self.evaluator.eval_counted(child, rng)?);
        }
        let winner = select_best(&self.values, rng);
        // x and x' differ exactly on the winner's flip set; only those bits need a draw
        let diff = std::mem::take(&mut self.flip_sets[winner]);

        self.crossover_values.clear();
        let c = self.spec.crossover_bias;
        let mut outcome = Ok(());
        for child in self.offspring.iter_mut() {
            child.copy_from(&self.state.x);
            for &i in &diff {
                if rng.random::<f64>() < c {
                    child.flip(i);
                }
            }
            match self.evaluator.eval_counted(child, rng) {
                Ok(v) => self.crossover_values.push(v),
                Err(e) => {
                    outcome = Err(e);
                    break;
                }
            }
        }
        self.flip_sets[winner] = diff;
        outcome?;

        let best = select_best(&self.crossover_values, rng);
        let parent = self.evaluator.eval_parent(&self.state.x, rng)?;
        if self.crossover_values[best] >= parent {
            self.accept(best);
        }
        Ok(())
    }

    pub fn run_to_end<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        while !self.is_finished() {
            self.step(rng);
        }
    }
}

/// One complete run from a random start with the stream seeded by `seed`.
pub fn run(
    problem: &ProblemSpec,
    algo: &AlgorithmSpec,
    noise: &NoiseModel,
    seed: u64,
    options: RunOptions,
) -> Result<RunOutcome> {
    let mut rng = RandomStream::from_seed(seed);
    let mut opt = Optimizer::new(*problem, *algo, *noise, options, &mut rng)?;
    opt.run_to_end(&mut rng);
    let s = opt.state();
    Ok(RunOutcome {
        seed,
        evaluations: s.evaluations,
        iterations: s.iterations,
        done: s.done,
        censored: s.censored,
    })
}
