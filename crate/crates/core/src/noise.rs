//! Prior noise: the genotype copy is corrupted before every evaluation.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{Fitness, ProblemSpec};
use crate::bitvec::{BernoulliPositions, BitString};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Bitwise,
    OneBit,
}

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::Bitwise => "bitwise",
            NoiseKind::OneBit => "one_bit",
        }
    }
}

/// A resolved noise model.
///
/// `Bitwise(q)` flips each bit independently with probability `q / n`;
/// `OneBit(q)` flips one uniformly chosen bit with probability `q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    q: f64,
}

impl NoiseModel {
    pub const NONE: NoiseModel = NoiseModel {
        kind: NoiseKind::None,
        q: 0.0,
    };

    pub fn bitwise(q: f64) -> Result<Self> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(Error::invalid(format!("noise rate {q} must be finite and >= 0")));
        }
        Ok(NoiseModel {
            kind: NoiseKind::Bitwise,
            q,
        })
    }

    pub fn one_bit(q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::invalid(format!("one-bit noise rate {q} outside [0, 1]")));
        }
        Ok(NoiseModel {
            kind: NoiseKind::OneBit,
            q,
        })
    }

    pub fn new(kind: NoiseKind, q: f64) -> Result<Self> {
        match kind {
            NoiseKind::None if q == 0.0 => Ok(Self::NONE),
            NoiseKind::None => Err(Error::invalid("noise kind none takes q = 0")),
            NoiseKind::Bitwise => Self::bitwise(q),
            NoiseKind::OneBit => Self::one_bit(q),
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Checks the model is usable on strings of length `n`.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        if self.kind == NoiseKind::Bitwise && self.q > n as f64 {
            return Err(Error::invalid(format!(
                "bitwise noise rate q={} gives per-bit probability above 1 at n={n}",
                self.q
            )));
        }
        Ok(())
    }

    pub(crate) fn sampler(&self, n: usize) -> NoiseSampler {
        match self.kind {
            NoiseKind::None => NoiseSampler::Clean,
            NoiseKind::Bitwise if self.q == 0.0 => NoiseSampler::Clean,
            NoiseKind::Bitwise => NoiseSampler::Bitwise(BernoulliPositions::new(n, self.q / n as f64)),
            NoiseKind::OneBit => NoiseSampler::OneBit { n, q: self.q },
        }
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NoiseKind::None => f.write_str("none"),
            k => write!(f, "{}(q={})", k.name(), self.q),
        }
    }
}

/// Draws the set of positions a single noisy evaluation flips.
#[derive(Clone, Copy, Debug)]
pub(crate) enum NoiseSampler {
    Clean,
    Bitwise(BernoulliPositions),
    OneBit { n: usize, q: f64 },
}

impl NoiseSampler {
    #[inline]
    pub(crate) fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<usize>) {
        match self {
            NoiseSampler::Clean => out.clear(),
            NoiseSampler::Bitwise(b) => b.sample_into(rng, out),
            NoiseSampler::OneBit { n, q } => {
                out.clear();
                if rng.random::<f64>() < *q {
                    out.push(rng.random_range(0..*n));
                }
            }
        }
    }
}

/// Noisy copy of `x`; `x` itself is untouched.
pub fn perturb<R: Rng + ?Sized>(x: &BitString, noise: &NoiseModel, rng: &mut R) -> Result<BitString> {
    noise.validate_for(x.len())?;
    let mut flips = Vec::new();
    noise.sampler(x.len()).sample_into(rng, &mut flips);
    let mut y = x.clone();
    for &i in &flips {
        y.flip(i);
    }
    Ok(y)
}

/// Returned when a counted evaluation would exceed the evaluation budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BudgetExhausted;

/// Evaluates individuals through the noise model and tallies counted evaluations.
#[derive(Clone, Debug)]
pub struct NoisyEvaluator {
    problem: ProblemSpec,
    noise: NoiseModel,
    sampler: NoiseSampler,
    count_parent_reeval: bool,
    evaluations: u64,
    budget: u64,
    flips: Vec<usize>,
    scratch: BitString,
}

impl NoisyEvaluator {
    pub fn new(problem: ProblemSpec, noise: NoiseModel, count_parent_reeval: bool) -> Result<Self> {
        noise.validate_for(problem.n())?;
        Ok(NoisyEvaluator {
            problem,
            noise,
            sampler: noise.sampler(problem.n()),
            count_parent_reeval,
            evaluations: 0,
            budget: u64::MAX,
            flips: Vec::new(),
            scratch: BitString::zeros(problem.n()),
        })
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn counts_parent_reeval(&self) -> bool {
        self.count_parent_reeval
    }

    /// Noisy fitness of `x`, counted or not. Ignores the budget.
    pub fn eval<R: Rng + ?Sized>(&mut self, x: &BitString, rng: &mut R, counted: bool) -> Fitness {
        if counted {
            self.evaluations += 1;
        }
        self.noisy_fitness(x, rng)
    }

    /// Counted evaluation that refuses to run past the budget.
    #[inline]
    pub fn eval_counted<R: Rng + ?Sized>(&mut self, x: &BitString, rng: &mut R) -> std::result::Result<Fitness, BudgetExhausted> {
        if self.evaluations >= self.budget {
            return Err(BudgetExhausted);
        }
        self.evaluations += 1;
        Ok(self.noisy_fitness(x, rng))
    }

    /// Per-iteration parent re-evaluation; counted only when configured.
    #[inline]
    pub fn eval_parent<R: Rng + ?Sized>(&mut self, x: &BitString, rng: &mut R) -> std::result::Result<Fitness, BudgetExhausted> {
        if self.count_parent_reeval {
            self.eval_counted(x, rng)
        } else {
            Ok(self.noisy_fitness(x, rng))
        }
    }

    #[inline]
    fn noisy_fitness<R: Rng + ?Sized>(&mut self, x: &BitString, rng: &mut R) -> Fitness {
        debug_assert_eq!(x.len(), self.problem.n());
        self.sampler.sample_into(rng, &mut self.flips);
        if self.flips.is_empty() {
            return self.problem.fitness(x);
        }
        if self.problem.is_ones_symmetric() {
            let mut ones = x.ones_count() as isize;
            for &i in &self.flips {
                ones += if x.get(i) { -1 } else { 1 };
            }
            self.problem.fitness_of_ones(ones as usize)
        } else {
            self.scratch.copy_from(x);
            for &i in &self.flips {
                self.scratch.flip(i);
            }
            self.problem.fitness(&self.scratch)
        }
    }
}
