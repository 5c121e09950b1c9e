//! Bit strings and the deterministic randomness used by every stochastic component.
//!
//! Each trial owns one [`RandomStream`], derived from the master seed and the
//! trial index with [`derive_seed`]. All samplers here consume draws in a fixed
//! order, so a replay from the same seed is bit-identical.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const WORD_BITS: usize = 64;

/// A fixed-length string over {0, 1}, packed into 64-bit words.
///
/// Bits past `len` in the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString {
            words: vec![0; len.div_ceil(WORD_BITS)],
            len,
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut s = Self::zeros(len);
        for w in s.words.iter_mut() {
            *w = u64::MAX;
        }
        s.clear_tail();
        s
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                s.set(i, true);
            }
        }
        s
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / WORD_BITS] ^= 1u64 << (i % WORD_BITS);
    }

    pub fn ones_count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Length of the longest all-ones prefix.
    pub fn leading_ones(&self) -> usize {
        let mut total = 0;
        for &w in &self.words {
            let run = w.trailing_ones() as usize;
            total += run;
            if run < WORD_BITS {
                break;
            }
        }
        total.min(self.len)
    }

    pub fn is_all_ones(&self) -> bool {
        self.ones_count() == self.len
    }

    pub fn hamming_distance(&self, other: &BitString) -> usize {
        assert_eq!(self.len, other.len, "length mismatch");
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Overwrites `self` with `other` without reallocating.
    #[inline]
    pub fn copy_from(&mut self, other: &BitString) {
        debug_assert_eq!(self.len, other.len);
        self.words.copy_from_slice(&other.words);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    fn clear_tail(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString(\"{self}\")")
    }
}

impl std::str::FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::invalid(format!("not a bit: {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BitString::from_bits(&bits))
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `index` under `master_seed`: `splitmix64(master ^ splitmix64(index))`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index))
}

/// Deterministic generator owned by a single trial.
#[derive(Clone, Debug)]
pub struct RandomStream(ChaCha8Rng);

impl RandomStream {
    pub fn from_seed(seed: u64) -> Self {
        RandomStream(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn for_trial(master_seed: u64, trial_index: u64) -> Self {
        Self::from_seed(derive_seed(master_seed, trial_index))
    }
}

impl RngCore for RandomStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Uniformly random string: one fair draw per bit, in index order.
pub fn random_bitstring<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<BitString> {
    if n == 0 {
        return Err(Error::invalid("bit string length must be at least 1"));
    }
    let mut s = BitString::zeros(n);
    for i in 0..n {
        if rng.random::<bool>() {
            s.set(i, true);
        }
    }
    Ok(s)
}

/// Copy of `x` with the given distinct positions flipped.
pub fn flip_bits(x: &BitString, indices: &[usize]) -> Result<BitString> {
    let mut seen = vec![false; x.len()];
    for &i in indices {
        if i >= x.len() {
            return Err(Error::invalid(format!(
                "index {i} out of range for length {}",
                x.len()
            )));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::invalid(format!("duplicate index {i}")));
        }
    }
    let mut y = x.clone();
    for &i in indices {
        y.flip(i);
    }
    Ok(y)
}

/// `count` distinct positions from `[0, n)`, uniform over all subsets.
///
/// Partial Fisher-Yates: draw `t` picks uniformly from the remaining `n - t`
/// positions, so exactly `count` draws are consumed.
pub fn sample_distinct<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if count > n {
        return Err(Error::invalid(format!(
            "cannot choose {count} distinct positions out of {n}"
        )));
    }
    let mut sampler = IndexSampler::new(n);
    let mut out = Vec::with_capacity(count);
    sampler.sample_into(count, rng, &mut out);
    Ok(out)
}

/// `Bin(n, p)` as `n` Bernoulli draws in fixed order.
pub fn sample_binomial<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<usize> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(binomial_draws(n, p, rng))
}

#[inline]
pub(crate) fn binomial_draws<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> usize {
    (0..n).filter(|_| rng.random::<f64>() < p).count()
}

/// Reusable partial Fisher-Yates sampler.
///
/// The permutation buffer is kept between calls; a partial shuffle of any
/// permutation still yields a uniform ordered subset.
#[derive(Clone, Debug)]
pub(crate) struct IndexSampler {
    perm: Vec<usize>,
}

impl IndexSampler {
    pub(crate) fn new(n: usize) -> Self {
        IndexSampler {
            perm: (0..n).collect(),
        }
    }

    pub(crate) fn sample_into<R: Rng + ?Sized>(&mut self, count: usize, rng: &mut R, out: &mut Vec<usize>) {
        let n = self.perm.len();
        debug_assert!(count <= n);
        out.clear();
        for t in 0..count {
            let j = rng.random_range(t..n);
            self.perm.swap(t, j);
            out.push(self.perm[t]);
        }
    }
}

/// Positions selected by independent Bernoulli(p) trials over `[0, n)`.
///
/// Sampled by geometric gap skipping, so a draw is spent per selected
/// position (plus one to run off the end) rather than per bit.
#[derive(Clone, Copy, Debug)]
pub(crate) struct BernoulliPositions {
    n: usize,
    p: f64,
    ln_miss: f64,
    // P(no position selected) = (1 - p)^n
    none_selected: f64,
}

impl BernoulliPositions {
    pub(crate) fn new(n: usize, p: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&p));
        let ln_miss = (-p).ln_1p();
        BernoulliPositions {
            n,
            p,
            ln_miss,
            none_selected: (n as f64 * ln_miss).exp(),
        }
    }

    pub(crate) fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        if self.p <= 0.0 || self.n == 0 {
            return;
        }
        if self.p >= 1.0 {
            out.extend(0..self.n);
            return;
        }
        let mut pos = 0usize;
        let mut first = true;
        loop {
            // u in (0, 1]
            let u = 1.0 - rng.random::<f64>();
            // the first gap reaches past the end iff u <= (1 - p)^n
            if first && u <= self.none_selected {
                return;
            }
            first = false;
            let gap = (u.ln() / self.ln_miss).floor();
            if gap >= (self.n - pos) as f64 {
                return;
            }
            pos += gap as usize;
            out.push(pos);
            pos += 1;
            if pos >= self.n {
                return;
            }
        }
    }
}
