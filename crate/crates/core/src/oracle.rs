//! Exact expected runtime of the (1+1) EA on ones-count-symmetric benchmarks.
//!
//! For OneMax and Jump_k both the fitness and the mutation law depend on the
//! parent only through its number of ones `j`, so the run is a Markov chain on
//! `j ∈ {0..n}` absorbed at `j = n`. Each iteration mutates with rate `1/n`,
//! draws fresh bitwise noise for both the offspring and the parent, and
//! accepts when the noisy offspring value is at least the noisy parent value.

use crate::benchmarks::{Fitness, ProblemKind, ProblemSpec};
use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseModel};

/// Largest problem size the dense solver accepts.
pub const MAX_N: usize = 64;

const RESIDUAL_TOL: f64 = 1e-9;

/// Problem and noise of a (1+1) EA chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainSpec {
    problem: ProblemSpec,
    noise: NoiseModel,
}

impl ChainSpec {
    pub fn new(problem: ProblemSpec, noise: NoiseModel) -> Result<Self> {
        if problem.kind() == ProblemKind::LeadingOnes {
            return Err(Error::invalid("the exact chain covers onemax and jump only"));
        }
        if problem.n() > MAX_N {
            return Err(Error::invalid(format!("the exact chain supports n <= {MAX_N}")));
        }
        if noise.kind() == NoiseKind::OneBit {
            return Err(Error::invalid("the exact chain supports no noise or bitwise noise"));
        }
        noise.validate_for(problem.n())?;
        Ok(ChainSpec { problem, noise })
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn per_bit_noise(&self) -> f64 {
        match self.noise.kind() {
            NoiseKind::Bitwise => self.noise.q() / self.problem.n() as f64,
            _ => 0.0,
        }
    }
}

/// Expected runtime from every start state and under a uniform random start.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectedRuntime {
    /// Expected number of iterations from a uniformly random string.
    pub iterations: f64,
    /// Expected iterations from each ones-count `0..=n`; the last entry is 0.
    pub per_state: Vec<f64>,
    /// Set when the optimum is unreachable and the expectation is infinite.
    pub diverged: bool,
}

impl ExpectedRuntime {
    /// Expected counted evaluations: one per iteration, two when the parent
    /// re-evaluation is counted as well.
    pub fn evaluations(&self, count_parent_reeval: bool) -> f64 {
        self.iterations * if count_parent_reeval { 2.0 } else { 1.0 }
    }
}

fn binomial_coefficient(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    (0..=n)
        .map(|k| binomial_coefficient(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32))
        .collect()
}

/// Law of the number of ones after flipping each bit independently with
/// probability `rate`, starting from `j` ones out of `n`.
fn flip_law(n: usize, j: usize, rate: f64) -> Vec<f64> {
    let down = binomial_pmf(j, rate);
    let up = binomial_pmf(n - j, rate);
    let mut out = vec![0.0; n + 1];
    for (b, &pd) in down.iter().enumerate() {
        if pd == 0.0 {
            continue;
        }
        for (a, &pu) in up.iter().enumerate() {
            out[j - b + a] += pd * pu;
        }
    }
    out
}

/// Offspring ones-count law under standard bit mutation with rate `1/n`.
pub fn mutation_kernel(n: usize, j: usize) -> Vec<f64> {
    assert!(j <= n, "parent ones-count {j} exceeds n = {n}");
    flip_law(n, j, 1.0 / n as f64)
}

/// Law of the observed ones-count of a string with `m` ones under bitwise noise `q`.
pub fn noisy_fitness_law(n: usize, m: usize, q: f64) -> Vec<f64> {
    assert!(m <= n);
    assert!(q >= 0.0 && q <= n as f64, "q/n must lie in [0, 1]");
    flip_law(n, m, q / n as f64)
}

/// Law of the observed fitness value: `(fitness, probability)` pairs sorted by fitness.
fn observed_fitness(problem: &ProblemSpec, m: usize, rate: f64) -> Vec<(Fitness, f64)> {
    let n = problem.n();
    let law = flip_law(n, m, rate);
    let mut by_value: Vec<(Fitness, f64)> = law
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(ones, &p)| (problem.fitness_of_ones(ones), p))
        .collect();
    by_value.sort_by_key(|&(f, _)| f);
    by_value.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    by_value
}

/// `P(noisy f(offspring) >= noisy f(parent))` for each pair of true ones-counts.
fn acceptance(chain: &ChainSpec) -> Vec<Vec<f64>> {
    let problem = chain.problem;
    let n = problem.n();
    let rate = chain.per_bit_noise();
    let laws: Vec<_> = (0..=n).map(|m| observed_fitness(&problem, m, rate)).collect();
    (0..=n)
        .map(|parent| {
            (0..=n)
                .map(|child| {
                    laws[parent]
                        .iter()
                        .map(|&(fp, pp)| {
                            let tail: f64 = laws[child].iter().filter(|&&(fc, _)| fc >= fp).map(|&(_, pc)| pc).sum();
                            pp * tail
                        })
                        .sum()
                })
                .collect()
        })
        .collect()
}

/// Row-stochastic per-iteration transition matrix over ones-counts; row `n` is absorbing.
pub fn transition_matrix(chain: &ChainSpec) -> Vec<Vec<f64>> {
    let n = chain.problem.n();
    let accept = acceptance(chain);
    let mut rows = Vec::with_capacity(n + 1);
    for j in 0..n {
        let kernel = mutation_kernel(n, j);
        let mut row = vec![0.0; n + 1];
        let mut moved = 0.0;
        for (target, &pk) in kernel.iter().enumerate() {
            if target != j {
                let p = pk * accept[j][target];
                row[target] = p;
                moved += p;
            }
        }
        row[j] = 1.0 - moved;
        rows.push(row);
    }
    let mut absorbing = vec![0.0; n + 1];
    absorbing[n] = 1.0;
    rows.push(absorbing);
    rows
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting; `None` if singular.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let size = b.len();
    for col in 0..size {
        let pivot = (col..size).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..size {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                let (upper, lower) = a.split_at_mut(row);
                for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                    *dst -= factor * src;
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; size];
    for row in (0..size).rev() {
        let tail: f64 = (row + 1..size).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Expected number of (1+1) EA iterations until the optimum is accepted.
pub fn expected_runtime_1p1(chain: &ChainSpec) -> ExpectedRuntime {
    let n = chain.problem.n();
    let p = transition_matrix(chain);
    // (I - Q) t = 1 over the transient states 0..n
    let system: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j)) - p[i][j]).collect())
        .collect();
    let ones = vec![1.0; n];
    let solved = solve_dense(system.clone(), ones.clone()).filter(|t| {
        let scale = t.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        system.iter().zip(&ones).all(|(row, &rhs)| {
            let lhs: f64 = row.iter().zip(t).map(|(a, x)| a * x).sum();
            (lhs - rhs).abs() <= RESIDUAL_TOL * scale
        }) && t.iter().all(|&v| v >= 0.0)
    });
    match solved {
        Some(mut t) => {
            t.push(0.0);
            let start = binomial_pmf(n, 0.5);
            let iterations = start.iter().zip(&t).map(|(w, v)| w * v).sum();
            ExpectedRuntime {
                iterations,
                per_state: t,
                diverged: false,
            }
        }
        None => ExpectedRuntime {
            iterations: f64::INFINITY,
            per_state: vec![f64::INFINITY; n + 1],
            diverged: true,
        },
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::bitvec::BitString;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn kernel_examples() {
        assert_eq!(mutation_kernel(1, 0), vec![0.0, 1.0]);
        let k = mutation_kernel(2, 1);
        assert!(close(k[0], 0.25, 1e-15) && close(k[1], 0.5, 1e-15) && close(k[2], 0.25, 1e-15));
        for n in 1..=40 {
            for j in 0..=n {
                let s: f64 = mutation_kernel(n, j).iter().sum();
                assert!(close(s, 1.0, 1e-12), "n={n} j={j}: {s}");
            }
        }
    }

    #[test]
    fn noise_law_examples() {
        assert_eq!(noisy_fitness_law(5, 3, 0.0), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let l = noisy_fitness_law(2, 1, 1.0);
        assert!(close(l[0], 0.25, 1e-15) && close(l[1], 0.5, 1e-15) && close(l[2], 0.25, 1e-15));
        let q = 1.0 / (6.0 * std::f64::consts::E);
        let l = noisy_fitness_law(8, 8, q);
        assert!(close(l[8], (1.0 - q / 8.0).powi(8), 1e-15));
    }

    #[test]
    fn rows_are_stochastic() {
        let q = 1.0 / (6.0 * std::f64::consts::E);
        for chain in [
            ChainSpec::new(ProblemSpec::onemax(12).unwrap(), NoiseModel::NONE).unwrap(),
            ChainSpec::new(ProblemSpec::jump(16, 3).unwrap(), NoiseModel::bitwise(q).unwrap()).unwrap(),
            ChainSpec::new(ProblemSpec::jump(10, 2).unwrap(), NoiseModel::bitwise(1.0).unwrap()).unwrap(),
        ] {
            for row in transition_matrix(&chain) {
                assert!(close(row.iter().sum(), 1.0, 1e-12));
                assert!(row.iter().all(|&p| p >= -1e-15));
            }
        }
    }

    #[test]
    fn noiseless_acceptance_is_fitness_comparison() {
        let chain = ChainSpec::new(ProblemSpec::jump(9, 3).unwrap(), NoiseModel::NONE).unwrap();
        let acc = acceptance(&chain);
        let p = chain.problem;
        for j in 0..=9 {
            for jj in 0..=9 {
                let expect = f64::from(u8::from(p.fitness_of_ones(jj) >= p.fitness_of_ones(j)));
                assert_eq!(acc[j][jj], expect);
            }
        }
    }

    #[test]
    fn single_bit_onemax() {
        let chain = ChainSpec::new(ProblemSpec::onemax(1).unwrap(), NoiseModel::NONE).unwrap();
        let r = expected_runtime_1p1(&chain);
        assert!(close(r.iterations, 0.5, 1e-12));
        assert!(!r.diverged);
        assert!(close(r.evaluations(true), 1.0, 1e-12));
    }

    #[test]
    fn rejects_unsupported_chains() {
        assert!(ChainSpec::new(ProblemSpec::leadingones(8).unwrap(), NoiseModel::NONE).is_err());
        assert!(ChainSpec::new(ProblemSpec::onemax(65).unwrap(), NoiseModel::NONE).is_err());
        assert!(ChainSpec::new(ProblemSpec::onemax(8).unwrap(), NoiseModel::one_bit(0.5).unwrap()).is_err());
    }

    /// Full chain on all 2^n strings: enumerates every mutation mask and every
    /// pair of noise masks, without lumping by ones-count.
    fn string_level_expectation(problem: ProblemSpec, noise_rate: f64) -> f64 {
        let n = problem.n();
        let size = 1usize << n;
        let to_bits = |m: usize| BitString::from_bits(&(0..n).map(|i| m >> i & 1 == 1).collect::<Vec<_>>());
        let mask_prob = |mask: usize, rate: f64| {
            let k = mask.count_ones() as i32;
            rate.powi(k) * (1.0 - rate).powi(n as i32 - k)
        };
        let optimum = size - 1;
        let mut system = vec![vec![0.0; size - 1]; size - 1];
        for x in 0..optimum {
            let mut stay = mask_prob(0, 1.0 / n as f64);
            for mut_mask in 1..size {
                let pm = mask_prob(mut_mask, 1.0 / n as f64);
                let y = x ^ mut_mask;
                let mut accept = 0.0;
                for nx in 0..size {
                    for ny in 0..size {
                        let fp = problem.fitness(&to_bits(x ^ nx));
                        let fc = problem.fitness(&to_bits(y ^ ny));
                        if fc >= fp {
                            accept += mask_prob(nx, noise_rate) * mask_prob(ny, noise_rate);
                        }
                    }
                }
                if y != optimum {
                    system[x][y] -= pm * accept;
                }
                stay += pm * (1.0 - accept);
            }
            system[x][x] += 1.0 - stay;
        }
        let t = solve_dense(system, vec![1.0; size - 1]).unwrap();
        t.iter().sum::<f64>() / size as f64
    }

    #[test]
    fn lumped_chain_matches_string_level_chain() {
        for n in 1..=3 {
            let p = ProblemSpec::onemax(n).unwrap();
            let exact = string_level_expectation(p, 0.0);
            let lumped = expected_runtime_1p1(&ChainSpec::new(p, NoiseModel::NONE).unwrap()).iterations;
            assert!(close(exact, lumped, 1e-10), "n={n}: {exact} vs {lumped}");
        }
        for (p, q) in [
            (ProblemSpec::onemax(3).unwrap(), 0.6),
            (ProblemSpec::jump(4, 2).unwrap(), 0.0),
            (ProblemSpec::jump(4, 2).unwrap(), 1.0),
        ] {
            let exact = string_level_expectation(p, q / p.n() as f64);
            let noise = if q == 0.0 { NoiseModel::NONE } else { NoiseModel::bitwise(q).unwrap() };
            let lumped = expected_runtime_1p1(&ChainSpec::new(p, noise).unwrap()).iterations;
            assert!(close(exact, lumped, 1e-9 * exact.max(1.0)), "{p} q={q}: {exact} vs {lumped}");
        }
    }

    #[test]
    fn noise_slows_onemax() {
        let q = 1.0 / (6.0 * std::f64::consts::E);
        let p = ProblemSpec::onemax(10).unwrap();
        let clean = expected_runtime_1p1(&ChainSpec::new(p, NoiseModel::NONE).unwrap());
        let noisy = expected_runtime_1p1(&ChainSpec::new(p, NoiseModel::bitwise(q).unwrap()).unwrap());
        assert!(noisy.iterations > clean.iterations);
    }

    #[test]
    fn per_state_values_decrease_towards_onemax_optimum() {
        let r = expected_runtime_1p1(&ChainSpec::new(ProblemSpec::onemax(20).unwrap(), NoiseModel::NONE).unwrap());
        assert!(r.per_state.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(*r.per_state.last().unwrap(), 0.0);
    }
}
