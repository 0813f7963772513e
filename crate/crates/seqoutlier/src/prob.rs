//! Finite-alphabet distributions, empirical types, sampling and divergences.
//!
//! All divergences are in nats. Zero-probability conventions follow the usual
//! information-theoretic ones: `0 ln(0/q) = 0` and `p ln(p/0) = +inf`, the
//! latter reported as [`Divergence::Infinite`].

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{out_of_range, Error, Result};

/// Tolerance on the total mass of a [`Distribution`].
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Elementwise tolerance used by [`Distribution::approx_eq`].
pub const EQ_TOLERANCE: f64 = 1e-12;

/// A probability vector over the alphabet `{0, .., len-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    /// Builds a distribution, checking non-negativity and unit mass within
    /// [`SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "alphabet size must be at least 2, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("bad entry {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Accepts a vector whose mass is within `tol` of one and rescales it to
    /// unit mass.
    pub fn normalized(probs: Vec<f64>, tol: f64) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if !total.is_finite() || (total - 1.0).abs() > tol {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}, expected 1 within {tol}"
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution("negative entry".into()));
        }
        Self::new(probs.iter().map(|p| p / total).collect())
    }

    /// Bernoulli distribution with probability `p` of symbol 1.
    pub fn bernoulli(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(out_of_range(format!("bernoulli parameter {p}")));
        }
        Self::new(vec![1.0 - p, p])
    }

    pub fn point_mass(symbol: usize, alphabet_size: usize) -> Result<Self> {
        if symbol >= alphabet_size {
            return Err(out_of_range(format!("symbol {symbol} >= {alphabet_size}")));
        }
        let mut probs = vec![0.0; alphabet_size];
        probs[symbol] = 1.0;
        Self::new(probs)
    }

    pub fn uniform(alphabet_size: usize) -> Result<Self> {
        Self::new(vec![1.0 / alphabet_size as f64; alphabet_size])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn alphabet_size(&self) -> usize {
        self.probs.len()
    }

    pub fn is_fully_supported(&self) -> bool {
        self.probs.iter().all(|p| *p > 0.0)
    }

    /// Elementwise comparison within `tol`.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.alphabet_size() == other.alphabet_size()
            && self
                .probs
                .iter()
                .zip(&other.probs)
                .all(|(a, b)| (a - b).abs() <= tol)
    }

    /// Arithmetic mean of a non-empty family of distributions.
    pub fn mean<'a, I>(dists: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Distribution>,
    {
        let mut iter = dists.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidDistribution("mean of no distributions".into()))?;
        let mut acc = first.probs.clone();
        let mut count = 1usize;
        for d in iter {
            check_same_alphabet(first, d)?;
            for (a, p) in acc.iter_mut().zip(&d.probs) {
                *a += p;
            }
            count += 1;
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        Ok(Self { probs: acc })
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.probs
    }
}

pub(crate) fn check_same_alphabet(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.alphabet_size() != q.alphabet_size() {
        return Err(Error::AlphabetMismatch(
            p.alphabet_size(),
            q.alphabet_size(),
        ));
    }
    Ok(())
}

/// A non-negative divergence value in nats, or an explicit infinity.
///
/// `Infinite` compares greater than every finite value and absorbs sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub const ZERO: Divergence = Divergence::Finite(0.0);

    /// Wraps a raw value, mapping `+inf` to `Infinite`.
    pub fn from_f64(v: f64) -> Self {
        if v.is_infinite() {
            Divergence::Infinite
        } else {
            Divergence::Finite(v)
        }
    }

    /// The value as `f64`, with `Infinite` mapped to `f64::INFINITY`.
    pub fn value(self) -> f64 {
        match self {
            Divergence::Finite(v) => v,
            Divergence::Infinite => f64::INFINITY,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Divergence::Finite(v) => Some(v),
            Divergence::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Divergence::Finite(_))
    }

    pub fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Divergence::Finite(a), Divergence::Finite(b)) => a.total_cmp(b),
            (Divergence::Finite(_), Divergence::Infinite) => Ordering::Less,
            (Divergence::Infinite, Divergence::Finite(_)) => Ordering::Greater,
            (Divergence::Infinite, Divergence::Infinite) => Ordering::Equal,
        }
    }
}

impl PartialOrd for Divergence {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.total_cmp(other))
    }
}

impl Add for Divergence {
    type Output = Divergence;
    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (Divergence::Finite(a), Divergence::Finite(b)) => Divergence::Finite(a + b),
            _ => Divergence::Infinite,
        }
    }
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Divergence::Finite(v) => match f.precision() {
                Some(p) => write!(f, "{v:.p$}"),
                None => write!(f, "{v}"),
            },
            Divergence::Infinite => write!(f, "inf"),
        }
    }
}

/// KL divergence on raw probability slices; `+inf` when `p` is not
/// absolutely continuous with respect to `q`.
pub(crate) fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            acc += a * (a / b).ln();
        }
    }
    acc.max(0.0)
}

/// `D(p || q)`.
pub fn kl(p: &Distribution, q: &Distribution) -> Result<Divergence> {
    check_same_alphabet(p, q)?;
    Ok(Divergence::from_f64(kl_raw(&p.probs, &q.probs)))
}

/// Binary KL divergence `p ln(p/q) + (1-p) ln((1-p)/(1-q))` for `p, q` in `(0,1)`.
pub fn binary_kl(p: f64, q: f64) -> Result<f64> {
    for (name, v) in [("p", p), ("q", q)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(out_of_range(format!("{name} = {v} must lie in (0,1)")));
        }
    }
    Ok((p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()).max(0.0))
}

/// Generalised Jensen-Shannon divergence
/// `alpha D(p || m) + D(q || m)` with `m = (alpha p + q) / (1 + alpha)`.
pub fn gjs(p: &Distribution, q: &Distribution, alpha: f64) -> Result<Divergence> {
    check_same_alphabet(p, q)?;
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(out_of_range(format!(
            "alpha = {alpha} must be non-negative"
        )));
    }
    if alpha == 0.0 {
        return Ok(Divergence::ZERO);
    }
    let m: Vec<f64> = p
        .probs
        .iter()
        .zip(&q.probs)
        .map(|(a, b)| (alpha * a + b) / (1.0 + alpha))
        .collect();
    Ok(Divergence::from_f64(
        alpha * kl_raw(&p.probs, &m) + kl_raw(&q.probs, &m),
    ))
}

pub(crate) fn renyi_raw(p: &[f64], q: &[f64], order: f64) -> f64 {
    if order == 0.0 {
        let mass: f64 = p
            .iter()
            .zip(q)
            .filter(|(a, _)| **a > 0.0)
            .map(|(_, b)| *b)
            .sum();
        return if mass <= 0.0 {
            f64::INFINITY
        } else {
            (-mass.ln()).max(0.0)
        };
    }
    let s: f64 = p
        .iter()
        .zip(q)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| a.powf(order) * b.powf(1.0 - order))
        .sum();
    if s <= 0.0 {
        return f64::INFINITY;
    }
    (s.ln() / (order - 1.0)).max(0.0)
}

/// Renyi divergence of order `order` in `[0, 1)`.
pub fn renyi(p: &Distribution, q: &Distribution, order: f64) -> Result<Divergence> {
    check_same_alphabet(p, q)?;
    if !(0.0..1.0).contains(&order) {
        return Err(out_of_range(format!("order {order} must lie in [0,1)")));
    }
    Ok(Divergence::from_f64(renyi_raw(&p.probs, &q.probs, order)))
}

fn binary_grid_min(grid_step: f64, f: impl Fn(&[f64; 2]) -> f64) -> Result<Divergence> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(out_of_range(format!("grid step {grid_step}")));
    }
    let n = (1.0 / grid_step).round() as usize;
    let mut best = f64::INFINITY;
    for i in 0..=n {
        let v = i as f64 / n as f64;
        let val = f(&[1.0 - v, v]);
        if val < best {
            best = val;
        }
    }
    Ok(Divergence::from_f64(best))
}

fn require_binary(p: &Distribution, q: &Distribution) -> Result<()> {
    check_same_alphabet(p, q)?;
    if p.alphabet_size() != 2 {
        return Err(out_of_range(
            "variational oracles require a binary alphabet",
        ));
    }
    Ok(())
}

/// Grid minimum of `alpha D(p || V) + D(q || V)` over binary `V`.
///
/// Validation oracle for [`gjs`].
pub fn gjs_variational_oracle(
    p: &Distribution,
    q: &Distribution,
    alpha: f64,
    grid_step: f64,
) -> Result<Divergence> {
    require_binary(p, q)?;
    binary_grid_min(grid_step, |v| {
        let a = if alpha == 0.0 {
            0.0
        } else {
            alpha * kl_raw(&p.probs, v)
        };
        a + kl_raw(&q.probs, v)
    })
}

/// Grid minimum of `alpha D(V || p) + D(V || q)` over binary `V`.
///
/// Validation oracle for [`renyi`] at order `alpha / (1 + alpha)`.
pub fn renyi_variational_oracle(
    p: &Distribution,
    q: &Distribution,
    alpha: f64,
    grid_step: f64,
) -> Result<Divergence> {
    require_binary(p, q)?;
    if !(alpha >= 0.0) {
        return Err(out_of_range(format!(
            "alpha = {alpha} must be non-negative"
        )));
    }
    binary_grid_min(grid_step, |v| {
        let a = if alpha == 0.0 {
            0.0
        } else {
            alpha * kl_raw(v, &p.probs)
        };
        a + kl_raw(v, &q.probs)
    })
}

/// Symbol counts of a sequence over an alphabet of the given size.
pub fn symbol_counts(sequence: &[usize], alphabet_size: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; alphabet_size];
    for &s in sequence {
        if s >= alphabet_size {
            return Err(out_of_range(format!(
                "symbol {s} outside alphabet of size {alphabet_size}"
            )));
        }
        counts[s] += 1;
    }
    Ok(counts)
}

/// Type (empirical distribution) of a non-empty sequence.
pub fn empirical_type(sequence: &[usize], alphabet_size: usize) -> Result<Distribution> {
    if sequence.is_empty() {
        return Err(out_of_range("empirical type of an empty sequence"));
    }
    let counts = symbol_counts(sequence, alphabet_size)?;
    type_from_counts(&counts)
}

pub(crate) fn type_from_counts(counts: &[u64]) -> Result<Distribution> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(out_of_range("empirical type of an empty sequence"));
    }
    Distribution::new(counts.iter().map(|&c| c as f64 / n as f64).collect())
}

/// SplitMix64 finaliser, used as the avalanche function for seed derivation.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream seed from a master seed and a path of indices.
///
/// Each component is folded in as `h = splitmix64(h ^ splitmix64(c))`, so
/// distinct paths give statistically independent seeds.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |h, &c| splitmix64(h ^ splitmix64(c)))
}

/// Deterministic random source: ChaCha8 keyed by a 64-bit seed.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        let mut h = seed;
        for chunk in key.chunks_mut(8) {
            h = splitmix64(h);
            chunk.copy_from_slice(&h.to_le_bytes());
        }
        Self {
            seed,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Inverse-CDF sampler for a fixed distribution.
#[derive(Debug, Clone)]
pub struct Sampler {
    cdf: Vec<f64>,
}

impl Sampler {
    pub fn new(dist: &Distribution) -> Self {
        let mut acc = 0.0;
        let cdf = dist
            .probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Self { cdf }
    }

    pub fn draw(&self, rng: &mut Rng) -> usize {
        let u = rng.next_f64();
        let last = self.cdf.len() - 1;
        // Zero-mass symbols have no CDF jump and are never selected.
        self.cdf[..last]
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| {
                // Rounding may leave the last CDF entry slightly below 1; fall back
                // to the last symbol with positive mass.
                let mut s = last;
                while s > 0 && self.cdf[s] == self.cdf[s - 1] {
                    s -= 1;
                }
                s
            })
    }
}

/// `n` i.i.d. draws from `dist`.
pub fn sample(dist: &Distribution, n: usize, rng: &mut Rng) -> Vec<usize> {
    let sampler = Sampler::new(dist);
    (0..n).map(|_| sampler.draw(rng)).collect()
}
