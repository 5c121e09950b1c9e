//! Noise-free benchmark functions: OneMax, LeadingOnes and Jump_k.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bitvec::BitString;
use crate::error::{Error, Result};

/// Integer fitness; benchmarks never use floating point.
pub type Fitness = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    OneMax,
    LeadingOnes,
    Jump,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::OneMax => "onemax",
            ProblemKind::LeadingOnes => "leadingones",
            ProblemKind::Jump => "jump",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "onemax" => Ok(ProblemKind::OneMax),
            "leadingones" => Ok(ProblemKind::LeadingOnes),
            "jump" => Ok(ProblemKind::Jump),
            other => Err(Error::invalid(format!("unknown problem {other:?}"))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A benchmark together with its size `n` (and gap `k` for Jump).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawProblem", into = "RawProblem")]
pub struct ProblemSpec {
    kind: ProblemKind,
    n: usize,
    k: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    kind: ProblemKind,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
}

impl TryFrom<RawProblem> for ProblemSpec {
    type Error = Error;

    fn try_from(raw: RawProblem) -> Result<Self> {
        match (raw.kind, raw.k) {
            (ProblemKind::Jump, Some(k)) => ProblemSpec::jump(raw.n, k),
            (ProblemKind::Jump, None) => Err(Error::invalid("jump requires a gap size k")),
            (_, Some(_)) => Err(Error::invalid(format!("{} takes no gap size k", raw.kind))),
            (ProblemKind::OneMax, None) => ProblemSpec::onemax(raw.n),
            (ProblemKind::LeadingOnes, None) => ProblemSpec::leadingones(raw.n),
        }
    }
}

impl From<ProblemSpec> for RawProblem {
    fn from(p: ProblemSpec) -> Self {
        RawProblem {
            kind: p.kind,
            n: p.n,
            k: p.gap(),
        }
    }
}

impl ProblemSpec {
    pub fn onemax(n: usize) -> Result<Self> {
        Self::checked(ProblemKind::OneMax, n, 0)
    }

    pub fn leadingones(n: usize) -> Result<Self> {
        Self::checked(ProblemKind::LeadingOnes, n, 0)
    }

    pub fn jump(n: usize, k: usize) -> Result<Self> {
        if k < 1 || k >= n {
            return Err(Error::invalid(format!("jump gap k={k} must satisfy 1 <= k < n={n}")));
        }
        Self::checked(ProblemKind::Jump, n, k)
    }

    pub fn new(kind: ProblemKind, n: usize, k: Option<usize>) -> Result<Self> {
        RawProblem { kind, n, k }.try_into()
    }

    fn checked(kind: ProblemKind, n: usize, k: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::invalid("problem size n must be at least 1"));
        }
        Ok(ProblemSpec { kind, n, k })
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Gap size, present only for Jump.
    pub fn gap(&self) -> Option<usize> {
        (self.kind == ProblemKind::Jump).then_some(self.k)
    }

    pub fn max_fitness(&self) -> Fitness {
        match self.kind {
            ProblemKind::OneMax | ProblemKind::LeadingOnes => self.n as Fitness,
            ProblemKind::Jump => (self.n + self.k) as Fitness,
        }
    }

    /// True when fitness depends on `x` only through its number of ones.
    pub fn is_ones_symmetric(&self) -> bool {
        self.kind != ProblemKind::LeadingOnes
    }

    pub fn fitness(&self, x: &BitString) -> Fitness {
        debug_assert_eq!(x.len(), self.n);
        match self.kind {
            ProblemKind::OneMax => onemax(x),
            ProblemKind::LeadingOnes => leadingones(x),
            ProblemKind::Jump => jump_from_ones(self.n, self.k, x.ones_count()),
        }
    }

    /// Fitness of any string with `ones` one-bits; panics for LeadingOnes.
    #[inline]
    pub fn fitness_of_ones(&self, ones: usize) -> Fitness {
        match self.kind {
            ProblemKind::OneMax => ones as Fitness,
            ProblemKind::Jump => jump_from_ones(self.n, self.k, ones),
            ProblemKind::LeadingOnes => panic!("leadingones is not a function of the ones count"),
        }
    }

    pub fn is_optimum(&self, x: &BitString) -> bool {
        self.fitness(x) == self.max_fitness()
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.gap() {
            Some(k) => write!(f, "jump(n={}, k={k})", self.n),
            None => write!(f, "{}(n={})", self.kind, self.n),
        }
    }
}

pub fn onemax(x: &BitString) -> Fitness {
    x.ones_count() as Fitness
}

pub fn leadingones(x: &BitString) -> Fitness {
    x.leading_ones() as Fitness
}

pub fn jump(x: &BitString, k: usize) -> Fitness {
    jump_from_ones(x.len(), k, x.ones_count())
}

/// The gap `(n - k, n)` is open on both ends: `m = n - k` still scores `m + k`.
#[inline]
pub fn jump_from_ones(n: usize, k: usize, m: usize) -> Fitness {
    if m + k <= n || m == n {
        (m + k) as Fitness
    } else {
        (n - m) as Fitness
    }
}
