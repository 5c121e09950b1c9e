//! Two-sample tests comparing noisy runtimes with a noiseless baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::harness::{CurveKey, TrialRecord};
use crate::harness::NoiseRate;

/// Runtimes of completed trials.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample(Vec<f64>);

impl Sample {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("sample is empty"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("sample value {v} is not a finite non-negative number")));
        }
        Ok(Sample(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.len() as f64
    }

    fn variance(&self) -> f64 {
        let m = self.mean();
        self.0.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (self.len() as f64 - 1.0)
    }

    fn require_two(&self) -> Result<()> {
        if self.len() < 2 {
            Err(Error::invalid("tests need at least two values per sample"))
        } else {
            Ok(())
        }
    }
}

impl TryFrom<&[f64]> for Sample {
    type Error = Error;

    fn try_from(v: &[f64]) -> Result<Self> {
        Sample::new(v.to_vec())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WelchResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom; infinite in the degenerate zero-variance case.
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

/// Welch's unequal-variance t-test.
///
/// With both variances zero, p is 1 for equal means and 0 otherwise.
pub fn welch_t(a: &Sample, b: &Sample) -> Result<WelchResult> {
    a.require_two()?;
    b.require_two()?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (a.variance() / na, b.variance() / nb);
    let diff = a.mean() - b.mean();
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if diff == 0.0 {
            WelchResult { t: 0.0, df: f64::INFINITY, p: 1.0 }
        } else {
            WelchResult {
                t: diff.signum() * f64::INFINITY,
                df: f64::INFINITY,
                p: 0.0,
            }
        });
    }
    let t = diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::invalid(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}

/// Direction of a rank-sum test, stated for the first sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alternative {
    TwoSided,
    /// `a` tends to be smaller than `b`.
    Less,
    /// `a` tends to be larger than `b`.
    Greater,
}

/// Exact enumeration is used when `min(|a|, |b|)` is at most this and the pooled size at most [`EXACT_MAX_TOTAL`].
pub const EXACT_MAX_MIN_SIZE: usize = 12;
pub const EXACT_MAX_TOTAL: usize = 400;

/// Two-sided Wilcoxon rank-sum (Mann–Whitney) test.
pub fn wilcoxon_rank_sum(a: &Sample, b: &Sample) -> Result<f64> {
    wilcoxon_rank_sum_with(a, b, Alternative::TwoSided)
}

pub fn wilcoxon_rank_sum_with(a: &Sample, b: &Sample, alternative: Alternative) -> Result<f64> {
    a.require_two()?;
    b.require_two()?;
    let ranks = doubled_midranks(a.values(), b.values());
    let (m, n) = (a.len(), b.len());
    if m.min(n) <= EXACT_MAX_MIN_SIZE && m + n <= EXACT_MAX_TOTAL {
        Ok(exact_p(&ranks, m, alternative))
    } else {
        Ok(normal_p(&ranks, m, alternative))
    }
}

/// Twice the mid-ranks of the pooled sample (integers), `a` first.
fn doubled_midranks(a: &[f64], b: &[f64]) -> Vec<u64> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && pooled[order[end]] == pooled[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, averaged and doubled
        let doubled = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = doubled;
        }
        start = end;
    }
    ranks
}

/// Permutation law of the doubled rank sum of `size` items drawn from `ranks`,
/// as counts indexed by sum.
fn rank_sum_law(ranks: &[u64], size: usize) -> Vec<f64> {
    let max_sum: u64 = {
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable_by(|x, y| y.cmp(x));
        sorted[..size].iter().sum()
    };
    let width = max_sum as usize + 1;
    // dp[j][s]: subsets of size j with doubled sum s
    let mut dp = vec![vec![0f64; width]; size + 1];
    dp[0][0] = 1.0;
    for (seen, &r) in ranks.iter().enumerate() {
        let r = r as usize;
        for j in (1..=size.min(seen + 1)).rev() {
            let (lower, upper) = dp.split_at_mut(j);
            let (src, dst) = (&lower[j - 1], &mut upper[0]);
            for s in (r..width).rev() {
                dst[s] += src[s - r];
            }
        }
    }
    dp.swap_remove(size)
}

fn exact_p(ranks: &[u64], m: usize, alternative: Alternative) -> f64 {
    let n = ranks.len() - m;
    // enumerate over the smaller side; for b the direction flips
    let (size, observed, flipped) = if m <= n {
        (m, ranks[..m].iter().sum::<u64>(), false)
    } else {
        (n, ranks[m..].iter().sum::<u64>(), true)
    };
    let law = rank_sum_law(ranks, size);
    let total: f64 = law.iter().sum();
    let observed = observed as usize;
    let lower = law[..=observed.min(law.len() - 1)].iter().sum::<f64>() / total;
    let upper = law.get(observed..).map_or(0.0, |t| t.iter().sum::<f64>()) / total;
    let p = match (alternative, flipped) {
        (Alternative::TwoSided, _) => 2.0 * lower.min(upper),
        (Alternative::Less, false) | (Alternative::Greater, true) => lower,
        (Alternative::Greater, false) | (Alternative::Less, true) => upper,
    };
    p.clamp(0.0, 1.0)
}

fn normal_p(ranks: &[u64], m: usize, alternative: Alternative) -> f64 {
    let big_n = ranks.len() as f64;
    let (mf, nf) = (m as f64, big_n - m as f64);
    let w = ranks[..m].iter().sum::<u64>() as f64 / 2.0;
    let mean = mf * (big_n + 1.0) / 2.0;
    let mut counts: BTreeMap<u64, f64> = BTreeMap::new();
    for &r in ranks {
        *counts.entry(r).or_default() += 1.0;
    }
    let ties: f64 = counts.values().map(|t| t * t * t - t).sum();
    let var = mf * nf / 12.0 * ((big_n + 1.0) - ties / (big_n * (big_n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let sd = var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let d = w - mean;
    let p = match alternative {
        Alternative::TwoSided => 2.0 * std_normal.sf(((d.abs() - 0.5).max(0.0)) / sd),
        Alternative::Less => std_normal.cdf((d + 0.5) / sd),
        Alternative::Greater => std_normal.sf((d - 0.5) / sd),
    };
    p.clamp(0.0, 1.0)
}

/// `p < alpha / m`.
pub fn bonferroni_significant(p: f64, m: usize, alpha: f64) -> Result<bool> {
    if m < 1 {
        return Err(Error::invalid("number of comparisons must be at least 1"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(p < alpha / m as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TestKind {
    /// Welch t-test.
    T,
    /// Wilcoxon rank-sum.
    W,
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TestKind::T => "T",
            TestKind::W => "W",
        })
    }
}

impl TestKind {
    pub fn p_value(self, a: &Sample, b: &Sample) -> Result<f64> {
        match self {
            TestKind::T => welch_t(a, b).map(|r| r.p),
            TestKind::W => wilcoxon_rank_sum(a, b),
        }
    }
}

/// One row of a p-value table: a noisy setting against its baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct PValueRow {
    pub curve: CurveKey,
    pub n: usize,
    pub test: TestKind,
    /// Noise rate label (symbolic where recognised).
    pub q: String,
    pub q_value: f64,
    /// Absent when either group has fewer than two completed trials.
    pub p: Option<f64>,
}

pub const PVALUE_HEADER: [&str; 6] = ["n", "algorithm", "lambda_rule", "test", "q", "p"];

/// Compares every non-baseline noise rate with the `baseline_q` runs of the same setting.
pub fn pvalue_table(records: &[TrialRecord], baseline_q: f64) -> Vec<PValueRow> {
    // (curve, n) -> q bits -> completed runtimes
    let mut groups: BTreeMap<(CurveKey, usize), BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for r in records {
        let runtimes = groups.entry((CurveKey::of(r), r.n)).or_default().entry(r.q.to_bits()).or_default();
        if r.done {
            runtimes.push(r.evaluations as f64);
        }
    }
    let mut rows = Vec::new();
    for ((curve, n), by_q) in groups {
        let baseline = by_q
            .get(&baseline_q.to_bits())
            .and_then(|v| Sample::new(v.clone()).ok())
            .filter(|s| s.len() >= 2);
        let mut others: Vec<(f64, &Vec<f64>)> = by_q
            .iter()
            .map(|(bits, v)| (f64::from_bits(*bits), v))
            .filter(|(q, _)| q.to_bits() != baseline_q.to_bits())
            .collect();
        others.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (q, values) in others {
            let sample = Sample::new(values.clone()).ok().filter(|s| s.len() >= 2);
            for test in [TestKind::T, TestKind::W] {
                let p = match (&baseline, &sample) {
                    (Some(b), Some(s)) => test.p_value(b, s).ok(),
                    _ => None,
                };
                rows.push(PValueRow {
                    curve: curve.clone(),
                    n,
                    test,
                    q: NoiseRate::infer(n, q).label(),
                    q_value: q,
                    p,
                });
            }
        }
    }
    rows
}

/// Writes the table; with `bonferroni = Some((alpha, m))` a `significant` column is appended.
pub fn write_pvalue_csv<W: Write>(rows: &[PValueRow], bonferroni: Option<(f64, usize)>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = PVALUE_HEADER.to_vec();
    if bonferroni.is_some() {
        header.push("significant");
    }
    w.write_record(&header)?;
    for row in rows {
        let p = row.p.map_or_else(|| "-".to_string(), |p| p.to_string());
        let mut fields = vec![
            row.n.to_string(),
            row.curve.algorithm.clone(),
            row.curve.lambda_rule.clone(),
            row.test.to_string(),
            row.q.clone(),
            p,
        ];
        if let Some((alpha, m)) = bonferroni {
            fields.push(match row.p {
                Some(p) => bonferroni_significant(p, m, alpha)?.to_string(),
                None => "-".into(),
            });
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[f64]) -> Sample {
        Sample::new(v.to_vec()).unwrap()
    }

    /// Two-sided p of Student's t with even `nu` degrees of freedom, closed form.
    fn t_two_sided_even(t: f64, nu: u32) -> f64 {
        let theta = (t.abs() / f64::from(nu).sqrt()).atan();
        let (sin, cos2) = (theta.sin(), theta.cos().powi(2));
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..nu / 2 {
            term *= cos2 * (2 * j - 1) as f64 / (2 * j) as f64;
            sum += term;
        }
        1.0 - sin * sum
    }

    /// Brute force over all ways of assigning pooled values to `a`.
    fn brute_wilcoxon(a: &[f64], b: &[f64], alternative: Alternative) -> f64 {
        let ranks = doubled_midranks(a, b);
        let total = ranks.len();
        let observed: u64 = ranks[..a.len()].iter().sum();
        let (mut le, mut ge, mut count) = (0u64, 0u64, 0u64);
        for mask in 0u32..(1 << total) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            let sum: u64 = (0..total).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            count += 1;
            le += u64::from(sum <= observed);
            ge += u64::from(sum >= observed);
        }
        let (le, ge) = (le as f64 / count as f64, ge as f64 / count as f64);
        match alternative {
            Alternative::TwoSided => (2.0 * le.min(ge)).min(1.0),
            Alternative::Less => le,
            Alternative::Greater => ge,
        }
    }

    #[test]
    fn welch_examples() {
        let r = welch_t(&s(&[1., 2., 3., 4., 5.]), &s(&[2., 3., 4., 5., 6.])).unwrap();
        assert!((r.t + 1.0).abs() < 1e-12);
        assert!((r.df - 8.0).abs() < 1e-12);
        assert!((r.p - t_two_sided_even(-1.0, 8)).abs() < 1e-10);
        assert!((r.p - 0.3466).abs() < 1e-4);

        let a = s(&[3., 9., 4., 4.5]);
        let same = welch_t(&a, &a).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        assert_eq!(welch_t(&s(&[0., 0.]), &s(&[10., 10.])).unwrap().p, 0.0);
        assert_eq!(welch_t(&s(&[7., 7.]), &s(&[7., 7., 7.])).unwrap().p, 1.0);
        assert!(welch_t(&s(&[1.]), &s(&[1., 2.])).is_err());
    }

    #[test]
    fn welch_matches_closed_form_for_even_df() {
        // equal sizes and variances give df = 2(n - 1)
        for n in [2usize, 3, 5, 9] {
            let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let b: Vec<f64> = (0..n).map(|i| i as f64 + 0.7).collect();
            let r = welch_t(&s(&a), &s(&b)).unwrap();
            assert!((r.df - 2.0 * (n as f64 - 1.0)).abs() < 1e-9);
            assert!((r.p - t_two_sided_even(r.t, 2 * (n as u32 - 1))).abs() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn wilcoxon_examples() {
        let p = wilcoxon_rank_sum(&s(&[1., 2.]), &s(&[3., 4.])).unwrap();
        assert!((p - 2.0 / 6.0).abs() < 1e-12);
        let a = s(&[5., 1., 1., 9.]);
        assert_eq!(wilcoxon_rank_sum(&a, &a).unwrap(), 1.0);
        let lo: Vec<f64> = (1..=10).map(f64::from).collect();
        let hi: Vec<f64> = (11..=20).map(f64::from).collect();
        let p = wilcoxon_rank_sum(&s(&lo), &s(&hi)).unwrap();
        assert!((p - 2.0 / 184_756.0).abs() < 1e-15);
        let one = wilcoxon_rank_sum_with(&s(&lo), &s(&hi), Alternative::Less).unwrap();
        assert!((one - 1.0 / 184_756.0).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_exhaustive_small_sizes() {
        // deterministic pseudo-random values with ties
        let mut state = 0x9e37_79b9u64;
        let mut next = || {
            state = crate::bitvec::splitmix64(state);
            (state % 7) as f64
        };
        for total in 4..=12 {
            for m in 2..=total - 2 {
                for _ in 0..3 {
                    let a: Vec<f64> = (0..m).map(|_| next()).collect();
                    let b: Vec<f64> = (0..total - m).map(|_| next()).collect();
                    for alt in [Alternative::TwoSided, Alternative::Less, Alternative::Greater] {
                        let got = wilcoxon_rank_sum_with(&s(&a), &s(&b), alt).unwrap();
                        let want = brute_wilcoxon(&a, &b, alt);
                        assert!((got - want).abs() < 1e-12, "{a:?} {b:?} {alt:?}: {got} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn normal_approximation_is_close_to_exact() {
        let a: Vec<f64> = (0..12).map(|i| (i * 7 % 13) as f64 + 0.5).collect();
        let b: Vec<f64> = (0..30).map(|i| (i * 5 % 17) as f64).collect();
        let ranks = doubled_midranks(&a, &b);
        let exact = exact_p(&ranks, 12, Alternative::TwoSided);
        let approx = normal_p(&ranks, 12, Alternative::TwoSided);
        assert!((exact - approx).abs() < 0.02, "{exact} vs {approx}");
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..200).map(f64::from).collect();
        let b: Vec<f64> = (0..200).map(|i| f64::from(i) + 20.0).collect();
        let p = wilcoxon_rank_sum(&s(&a), &s(&b)).unwrap();
        let ranks = doubled_midranks(&a, &b);
        assert_eq!(p, normal_p(&ranks, 200, Alternative::TwoSided));
        assert!(p > 0.0 && p < 0.05);
    }

    #[test]
    fn bonferroni_examples() {
        assert!(!bonferroni_significant(0.02, 3, 0.05).unwrap());
        assert!(bonferroni_significant(0.01, 3, 0.05).unwrap());
        assert!(bonferroni_significant(0.04, 1, 0.05).unwrap());
        assert!(bonferroni_significant(0.01, 0, 0.05).is_err());
        assert!(bonferroni_significant(0.01, 3, 1.0).is_err());
    }

    fn sample_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0u32..50, 2..25).prop_map(|v| v.into_iter().map(f64::from).collect())
    }

    proptest! {
        #[test]
        fn tests_are_symmetric_and_bounded(a in sample_strategy(), b in sample_strategy()) {
            let (sa, sb) = (s(&a), s(&b));
            let w1 = wilcoxon_rank_sum(&sa, &sb).unwrap();
            let w2 = wilcoxon_rank_sum(&sb, &sa).unwrap();
            prop_assert!((w1 - w2).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&w1));
            let t1 = welch_t(&sa, &sb).unwrap();
            let t2 = welch_t(&sb, &sa).unwrap();
            prop_assert!((t1.p - t2.p).abs() < 1e-12);
            prop_assert!(t1.t == -t2.t || (t1.t.is_nan() && t2.t.is_nan()));
            prop_assert!((0.0..=1.0).contains(&t1.p));
        }

        #[test]
        fn shift_invariance(a in sample_strategy(), b in sample_strategy(), shift in 0u32..1000) {
            let d = f64::from(shift);
            let shifted = |v: &[f64]| s(&v.iter().map(|x| x + d).collect::<Vec<_>>());
            prop_assert_eq!(
                wilcoxon_rank_sum(&s(&a), &s(&b)).unwrap(),
                wilcoxon_rank_sum(&shifted(&a), &shifted(&b)).unwrap()
            );
            let t0 = welch_t(&s(&a), &s(&b)).unwrap();
            let t1 = welch_t(&shifted(&a), &shifted(&b)).unwrap();
            prop_assert!((t0.t - t1.t).abs() <= 1e-9 * t0.t.abs().max(1.0) || (t0.t.is_infinite() && t0.t == t1.t));
        }
    }
}
