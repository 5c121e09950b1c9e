//! Benchmarking evolutionary algorithms under prior (genotype) noise.
//!
//! The crate provides the (1+1) EA, the (1+λ) EA and the (1+(λ,λ)) GA on
//! OneMax, LeadingOnes and Jump_k with bitwise or one-bit prior noise, an
//! experiment harness with deterministic per-trial seeding, the statistical
//! tests used to compare noisy and noiseless runtimes, and an exact
//! Markov-chain solver for the expected runtime of the (1+1) EA.

pub mod algorithms;
pub mod benchmarks;
pub mod bitvec;
pub mod error;
pub mod harness;
pub mod noise;
pub mod oracle;
pub mod stats;

pub use algorithms::{run, AlgorithmKind, AlgorithmSpec, Optimizer, RunOptions, RunOutcome};
pub use benchmarks::{Fitness, ProblemKind, ProblemSpec};
pub use bitvec::{BitString, RandomStream};
pub use error::{Error, Result};
pub use harness::{execute, expand, ExperimentPlan, TrialRecord};
pub use noise::{NoiseKind, NoiseModel, NoisyEvaluator};
