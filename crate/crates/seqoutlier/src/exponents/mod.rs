//! Theoretical error exponents of the tests in [`crate::detectors`].
//!
//! Closed forms are evaluated directly from divergences. The remaining
//! exponents are constrained minima of KL sums, solved with
//! [`optimizer::minimize_kl_sum`] after grouping streams by their membership
//! in the true outlier set and the competing candidate sets. Only the
//! membership counts matter, so candidates are enumerated as count patterns
//! with one representative set each.

pub mod optimizer;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::Regime;
use crate::error::{out_of_range, Error, Result};
use crate::prob::{check_same_alphabet, gjs, kl_raw, renyi, renyi_raw, Distribution, Divergence};
use crate::scoring::{max_outliers, Subset, MAX_STREAMS};

pub use optimizer::{
    brute_force_tuple_oracle, minimize_kl_sum, Constraint, Functional, GroupedProblem,
    SimplexOptimizerSettings, TupleProblem,
};

fn check_pair(pn: &Distribution, pa: &Distribution) -> Result<()> {
    check_same_alphabet(pn, pa)
}

fn check_m(m: usize) -> Result<()> {
    if !(3..=MAX_STREAMS).contains(&m) {
        return Err(out_of_range(format!(
            "M = {m} must lie in 3..={MAX_STREAMS}"
        )));
    }
    Ok(())
}

fn check_mt(m: usize, t: usize) -> Result<()> {
    check_m(m)?;
    if t == 0 || t > max_outliers(m) {
        return Err(out_of_range(format!(
            "T = {t} must lie in 1..={} for M = {m}",
            max_outliers(m)
        )));
    }
    Ok(())
}

fn check_candidate(m: usize, t: usize, b: Subset) -> Result<()> {
    check_mt(m, t)?;
    b.check_within(m)?;
    if b.is_empty() || b.len() > t {
        return Err(Error::InvalidSubset(format!(
            "{b} must have between 1 and {t} members"
        )));
    }
    Ok(())
}

/// Misclassification exponent of the error-probability-constrained test:
/// `GJS(pn, pa, M-2)`.
pub fn exp_ep_exact_one(pn: &Distribution, pa: &Distribution, m: usize) -> Result<Divergence> {
    check_m(m)?;
    gjs(pn, pa, (m - 2) as f64)
}

/// Misclassification exponent of the stopping-time-constrained test:
/// Renyi divergence of order `(M-2)/(M-1)` of `pn` from `pa`.
pub fn exp_est_exact_one(pn: &Distribution, pa: &Distribution, m: usize) -> Result<Divergence> {
    check_m(m)?;
    renyi(pn, pa, (m - 2) as f64 / (m - 1) as f64)
}

/// Value of the exactly-`T` sequential exponent with its minimising `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdValue {
    pub value: Divergence,
    pub argmin_t: usize,
}

/// `min_{t=0..T-1} (T-t) [D_{t/T}(pa||pn) + D_{(M-2T+t)/(M-T)}(pn||pa)]`.
pub fn exp_ld(pn: &Distribution, pa: &Distribution, m: usize, t: usize) -> Result<LdValue> {
    check_pair(pn, pa)?;
    check_mt(m, t)?;
    let mut best = LdValue {
        value: Divergence::Infinite,
        argmin_t: 0,
    };
    for s in 0..t {
        let first = renyi_raw(pa.probs(), pn.probs(), s as f64 / t as f64);
        let second = renyi_raw(
            pn.probs(),
            pa.probs(),
            (m - 2 * t + s) as f64 / (m - t) as f64,
        );
        let v = Divergence::from_f64((t - s) as f64 * (first + second));
        if v < best.value || (s == 0 && best.value == Divergence::Infinite) {
            best = LdValue {
                value: v,
                argmin_t: s,
            };
        }
    }
    Ok(best)
}

/// `n_a D(pa || m) + n_n D(pn || m)` with `m` the size-weighted mean.
fn counted_spread(na: usize, pa: &[f64], nn: usize, pn: &[f64]) -> f64 {
    if na == 0 || nn == 0 {
        return 0.0;
    }
    let total = (na + nn) as f64;
    let mean: Vec<f64> = pa
        .iter()
        .zip(pn)
        .map(|(a, n)| (na as f64 * a + nn as f64 * n) / total)
        .collect();
    na as f64 * kl_raw(pa, &mean) + nn as f64 * kl_raw(pn, &mean)
}

/// Sets `C` in the at-most-`T` candidate space other than `b`, one per
/// membership pattern `(|C ∩ b|, |C \ b|)`.
fn competitor_patterns(m: usize, b: Subset, t: usize) -> Vec<Subset> {
    let inside = b.members();
    let outside = b.complement(m);
    let mut out = Vec::new();
    for i in 0..=inside.len() {
        for o in 0..=outside.len() {
            let size = i + o;
            if size == 0 || size > t || (i == inside.len() && o == 0) {
                continue;
            }
            let members: Vec<usize> = inside[..i].iter().chain(&outside[..o]).copied().collect();
            out.push(Subset::from_indices(&members).expect("distinct indices"));
        }
    }
    out
}

/// Minimising candidate and value of a threshold function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdValue {
    pub value: f64,
    pub argmin: Subset,
}

/// Smallest score `g_set(P, C)` over candidates `C != b` of size `1..=T`,
/// with `P` the tuple having `pa` on `b` and `pn` elsewhere.
///
/// Upper limit for the first threshold of the at-most tests; equals
/// `GJS(pn, pa, M-2)` when `T = 1`.
pub fn lambda_tilde1(
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    t: usize,
    b: Subset,
) -> Result<ThresholdValue> {
    check_pair(pn, pa)?;
    check_candidate(m, t, b)?;
    let mut best: Option<ThresholdValue> = None;
    for c in competitor_patterns(m, b, t) {
        let in_both = (c.mask() & b.mask()).count_ones() as usize;
        let c_only = c.len() - in_both;
        let b_only = b.len() - in_both;
        let neither = m - b.len() - c_only;
        let value = counted_spread(b_only, pa.probs(), neither, pn.probs())
            + counted_spread(in_both, pa.probs(), c_only, pn.probs());
        if best.map_or(true, |bv| value < bv.value) {
            best = Some(ThresholdValue { value, argmin: c });
        }
    }
    best.ok_or_else(|| out_of_range("no competing candidate"))
}

/// Constrained exponent with the minimising competitor set(s) and tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedExponent {
    pub value: f64,
    pub candidates: Vec<Subset>,
    pub tuple: Vec<Vec<f64>>,
}

fn solve_all(
    problems: Vec<(Vec<Subset>, TupleProblem)>,
    settings: &SimplexOptimizerSettings,
) -> Result<ConstrainedExponent> {
    let solved: Vec<Result<optimizer::TupleOptimum>> = problems
        .par_iter()
        .map(|(_, p)| p.solve(settings))
        .collect();
    let mut best: Option<ConstrainedExponent> = None;
    for ((candidates, _), r) in problems.into_iter().zip(solved) {
        let opt = match r {
            Ok(opt) => opt,
            Err(Error::Infeasible) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().map_or(true, |b| opt.value < b.value) {
            best = Some(ConstrainedExponent {
                value: opt.value,
                candidates,
                tuple: opt.tuple,
            });
        }
    }
    best.ok_or(Error::Infeasible)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(out_of_range(format!(
            "lambda = {lambda} must be non-negative"
        )));
    }
    Ok(())
}

/// False-reject exponent of the sequential at-most-`T` test for true set `b`:
/// the minimum KL cost of moving the plug-in tuple so that some competitor
/// `C != b` scores at most `lambda`.
pub fn exp_omega_set(
    lambda: f64,
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    b: Subset,
    t: usize,
    settings: &SimplexOptimizerSettings,
) -> Result<ConstrainedExponent> {
    check_pair(pn, pa)?;
    check_candidate(m, t, b)?;
    check_lambda(lambda)?;
    let problems = competitor_patterns(m, b, t)
        .into_iter()
        .map(|c| {
            let p = TupleProblem {
                m,
                nominal: pn.clone(),
                anomalous: pa.clone(),
                outliers: b,
                constraints: vec![Constraint::AtMost(Functional::Score(c), lambda)],
            };
            (vec![c], p)
        })
        .collect();
    solve_all(problems, settings)
}

/// [`exp_omega_set`] with a single outlier.
pub fn exp_omega_one(
    lambda: f64,
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    settings: &SimplexOptimizerSettings,
) -> Result<ConstrainedExponent> {
    exp_omega_set(lambda, pn, pa, m, Subset::singleton(0), 1, settings)
}

/// Pairs `(C, D)` of distinct candidates of size `1..=T`, one per membership
/// pattern relative to `b`, with `(C, D)` and `(D, C)` identified.
fn pair_patterns(m: usize, b: Subset, t: usize) -> Vec<(Subset, Subset)> {
    fn splits(total: usize) -> Vec<[usize; 4]> {
        let mut out = Vec::new();
        for a in 0..=total {
            for c in 0..=(total - a) {
                for d in 0..=(total - a - c) {
                    out.push([a, c, d, total - a - c - d]);
                }
            }
        }
        out
    }
    // Cells in order: in both C and D, C only, D only, neither.
    let assign = |members: &[usize], x: &[usize; 4]| -> (Vec<usize>, Vec<usize>) {
        let (mut c, mut d) = (Vec::new(), Vec::new());
        let mut it = members.iter().copied();
        for (cell, &count) in x.iter().enumerate() {
            for _ in 0..count {
                let i = it.next().expect("split sums to group size");
                if cell == 0 || cell == 1 {
                    c.push(i);
                }
                if cell == 0 || cell == 2 {
                    d.push(i);
                }
            }
        }
        (c, d)
    };
    let inside = b.members();
    let outside = b.complement(m);
    let mut out = Vec::new();
    for x in splits(inside.len()) {
        for y in splits(outside.len()) {
            let c_size = x[0] + x[1] + y[0] + y[1];
            let d_size = x[0] + x[2] + y[0] + y[2];
            if !(1..=t).contains(&c_size) || !(1..=t).contains(&d_size) {
                continue;
            }
            if x[1] + x[2] + y[1] + y[2] == 0 {
                continue;
            }
            let key = [x, y];
            let swapped = [[x[0], x[2], x[1], x[3]], [y[0], y[2], y[1], y[3]]];
            if swapped < key {
                continue;
            }
            let (mut c, mut d) = assign(&inside, &x);
            let (c2, d2) = assign(&outside, &y);
            c.extend(c2);
            d.extend(d2);
            out.push((
                Subset::from_indices(&c).expect("distinct"),
                Subset::from_indices(&d).expect("distinct"),
            ));
        }
    }
    out
}

/// Batch size for the pruned pair search; fixed so results never depend on
/// the thread count.
const PAIR_BATCH: usize = 8;

/// False-reject exponent of the fixed-length at-most-`T` test for true set
/// `b`: the minimum KL cost of making two distinct candidates both score at
/// most `lambda`.
pub fn exp_l_set(
    lambda: f64,
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    b: Subset,
    t: usize,
    settings: &SimplexOptimizerSettings,
) -> Result<ConstrainedExponent> {
    check_pair(pn, pa)?;
    check_candidate(m, t, b)?;
    check_lambda(lambda)?;
    let single = |c: Subset| TupleProblem {
        m,
        nominal: pn.clone(),
        anomalous: pa.clone(),
        outliers: b,
        constraints: vec![Constraint::AtMost(Functional::Score(c), lambda)],
    };
    // Dropping one of the two constraints gives a lower bound per pair, keyed
    // by the membership pattern of the remaining candidate.
    let pattern = |c: Subset| {
        let both = (c.mask() & b.mask()).count_ones() as usize;
        (both, c.len() - both)
    };
    let mut singles: Vec<Subset> = competitor_patterns(m, b, t);
    singles.push(b);
    let bounds: Vec<((usize, usize), f64)> = singles
        .par_iter()
        .map(|&c| {
            let v = match single(c).solve(settings) {
                Ok(opt) => opt.value,
                Err(Error::Infeasible) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            Ok((pattern(c), v))
        })
        .collect::<Result<_>>()?;
    let bound_of = |c: Subset| {
        bounds
            .iter()
            .find(|(p, _)| *p == pattern(c))
            .map_or(0.0, |(_, v)| *v)
    };

    let mut pairs: Vec<(f64, usize, Subset, Subset)> = pair_patterns(m, b, t)
        .into_iter()
        .enumerate()
        .map(|(k, (c, d))| (bound_of(c).max(bound_of(d)), k, c, d))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best: Option<(f64, usize, ConstrainedExponent)> = None;
    for batch in pairs.chunks(PAIR_BATCH) {
        let bar = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        let todo: Vec<&(f64, usize, Subset, Subset)> = batch.iter().filter(|p| p.0 < bar).collect();
        if todo.is_empty() {
            break;
        }
        let solved: Vec<Result<optimizer::TupleOptimum>> = todo
            .par_iter()
            .map(|&&(_, _, c, d)| {
                TupleProblem {
                    constraints: vec![
                        Constraint::AtMost(Functional::Score(c), lambda),
                        Constraint::AtMost(Functional::Score(d), lambda),
                    ],
                    ..single(c)
                }
                .solve(settings)
            })
            .collect();
        for (&&(_, k, c, d), r) in todo.iter().zip(solved) {
            let opt = match r {
                Ok(opt) => opt,
                Err(Error::Infeasible) => continue,
                Err(e) => return Err(e),
            };
            let better = best.as_ref().map_or(true, |(v, bk, _)| {
                opt.value < *v || (opt.value == *v && k < *bk)
            });
            if better {
                let ce = ConstrainedExponent {
                    value: opt.value,
                    candidates: vec![c, d],
                    tuple: opt.tuple,
                };
                best = Some((opt.value, k, ce));
            }
        }
    }
    best.map(|(_, _, ce)| ce).ok_or(Error::Infeasible)
}

/// [`exp_l_set`] with a single outlier.
pub fn exp_l_one(
    lambda: f64,
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    settings: &SimplexOptimizerSettings,
) -> Result<ConstrainedExponent> {
    exp_l_set(lambda, pn, pa, m, Subset::singleton(0), 1, settings)
}

/// Exponent of the fixed-length minimum-score test for exactly one outlier:
/// the minimum KL cost of making stream 2's score no larger than stream 1's
/// when stream 1 is the outlier.
pub fn exp_fixed_lnv_one(
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    settings: &SimplexOptimizerSettings,
) -> Result<ConstrainedExponent> {
    exp_fixed_lnv_t(pn, pa, m, 1, settings)
}

/// Exponent of the fixed-length test for exactly `T` outliers: the minimum
/// over competitors `C` of size `T` of the KL cost of making the nominal
/// spread of `C` no larger than that of the true set.
pub fn exp_fixed_lnv_t(
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    t: usize,
    settings: &SimplexOptimizerSettings,
) -> Result<ConstrainedExponent> {
    check_pair(pn, pa)?;
    check_mt(m, t)?;
    let b = Subset::first(t);
    let problems = competitor_patterns(m, b, t)
        .into_iter()
        .filter(|c| c.len() == t)
        .map(|c| {
            let p = TupleProblem {
                m,
                nominal: pn.clone(),
                anomalous: pa.clone(),
                outliers: b,
                constraints: vec![Constraint::AtLeast(
                    Functional::NominalSpread(b),
                    Functional::NominalSpread(c),
                )],
            };
            (vec![c], p)
        })
        .collect();
    solve_all(problems, settings)
}

/// Which true outlier sets a Bayesian exponent ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BayesScope {
    /// Worst case over every candidate of size `1..=T`.
    AllCandidates,
    /// A single true outlier set.
    Candidate(Subset),
}

fn scope_sets(m: usize, t: usize, scope: BayesScope) -> Result<Vec<Subset>> {
    match scope {
        BayesScope::AllCandidates => {
            check_mt(m, t)?;
            // Exponents depend on the true set only through its size.
            Ok((1..=t).map(Subset::first).collect())
        }
        BayesScope::Candidate(b) => {
            check_candidate(m, t, b)?;
            Ok(vec![b])
        }
    }
}

fn scope_upper(
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    t: usize,
    sets: &[Subset],
) -> Result<f64> {
    sets.iter()
        .map(|&b| lambda_tilde1(pn, pa, m, t, b).map(|v| v.value))
        .try_fold(f64::INFINITY, |acc, v| v.map(|v| acc.min(v)))
}

/// Bayesian exponent of the fixed-length at-most test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesFixed {
    pub value: f64,
    pub lambda_star: f64,
    /// Right end of the threshold search interval.
    pub upper: f64,
    /// Searched `(lambda, false-reject exponent)` pairs, sorted by `lambda`.
    pub trace: Vec<(f64, f64)>,
    /// The golden-section search was replaced by a grid scan.
    pub grid_fallback: bool,
}

/// Relative width at which the threshold search stops.
pub const BAYES_LAMBDA_TOL: f64 = 1e-3;

/// `max_{lambda in [0, upper]} min(lambda, L(lambda))` by golden-section
/// search, falling back to a grid scan if `L` is not numerically
/// non-increasing on the visited points.
pub fn bayes_fixed(
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    t: usize,
    scope: BayesScope,
    settings: &SimplexOptimizerSettings,
) -> Result<BayesFixed> {
    check_pair(pn, pa)?;
    let sets = scope_sets(m, t, scope)?;
    let upper = scope_upper(pn, pa, m, t, &sets)?;
    if upper <= 0.0 {
        return Ok(BayesFixed {
            value: 0.0,
            lambda_star: 0.0,
            upper,
            trace: vec![(0.0, 0.0)],
            grid_fallback: false,
        });
    }
    let mut trace: Vec<(f64, f64)> = Vec::new();
    let l_of = |lambda: f64, trace: &mut Vec<(f64, f64)>| -> Result<f64> {
        let mut v = f64::INFINITY;
        for &b in &sets {
            v = v.min(exp_l_set(lambda, pn, pa, m, b, t, settings)?.value);
        }
        trace.push((lambda, v));
        Ok(v)
    };
    let h = |lambda: f64, l: f64| lambda.min(l);

    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, upper);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = h(x1, l_of(x1, &mut trace)?);
    let mut f2 = h(x2, l_of(x2, &mut trace)?);
    while hi - lo > BAYES_LAMBDA_TOL * upper {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = h(x2, l_of(x2, &mut trace)?);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = h(x1, l_of(x1, &mut trace)?);
        }
    }
    let mut sorted = trace.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = sorted.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-6);
    let mut grid_fallback = false;
    if !monotone {
        grid_fallback = true;
        for k in 0..=40 {
            let lambda = upper * k as f64 / 40.0;
            l_of(lambda, &mut trace)?;
        }
        sorted = trace.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let (lambda_star, l_star) = sorted.iter().copied().fold((0.0, 0.0), |best, (x, l)| {
        if h(x, l) > h(best.0, best.1) {
            (x, l)
        } else {
            best
        }
    });
    Ok(BayesFixed {
        value: h(lambda_star, l_star),
        lambda_star,
        upper,
        trace: sorted,
        grid_fallback,
    })
}

/// Bayesian exponent of the sequential at-most test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesSeq {
    pub value: f64,
    /// Supremum of admissible first thresholds (not attained).
    pub lambda1: f64,
    pub lambda2: f64,
    /// False-reject exponent at `lambda2`.
    pub omega: f64,
}

/// `sup_{lambda2 < lambda1 < upper} min(lambda1, Omega(lambda2))` at the given
/// `lambda2`. The misclassification and false-alarm exponents grow with
/// `lambda1`, so the supremum takes `lambda1` to the upper limit; `Omega` is
/// non-increasing, so smaller `lambda2` can only help.
pub fn bayes_seq(
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    t: usize,
    scope: BayesScope,
    lambda2: f64,
    settings: &SimplexOptimizerSettings,
) -> Result<BayesSeq> {
    check_pair(pn, pa)?;
    if !(lambda2 > 0.0) {
        return Err(out_of_range(format!(
            "lambda2 = {lambda2} must be positive"
        )));
    }
    let sets = scope_sets(m, t, scope)?;
    let upper = scope_upper(pn, pa, m, t, &sets)?;
    let mut omega = f64::INFINITY;
    for &b in &sets {
        omega = omega.min(exp_omega_set(lambda2, pn, pa, m, b, t, settings)?.value);
    }
    Ok(BayesSeq {
        value: upper.min(omega),
        lambda1: upper,
        lambda2,
        omega,
    })
}

/// Optional thresholds used by [`exponent_report`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExponentParams {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda: Option<f64>,
    /// True outlier set for at-most regimes; defaults to `{1, .., T}`.
    pub outliers: Option<Subset>,
}

/// One named exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentEntry {
    pub name: String,
    pub value: Divergence,
    /// Optimiser argument, e.g. a minimising `t` or competitor set.
    pub argument: Option<String>,
}

/// Theoretical exponents of one regime at one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub regime: Regime,
    pub m: usize,
    pub t: usize,
    pub entries: Vec<ExponentEntry>,
}

impl ExponentReport {
    pub fn get(&self, name: &str) -> Option<Divergence> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.value)
    }
}

fn entry(name: &str, value: Divergence, argument: Option<String>) -> ExponentEntry {
    ExponentEntry {
        name: name.into(),
        value,
        argument,
    }
}

fn candidates_text(c: &[Subset]) -> String {
    c.iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Exponents guaranteed by the chosen regime.
///
/// At-most regimes need `lambda1` and `lambda2` (sequential) or `lambda`
/// (fixed-length).
pub fn exponent_report(
    regime: Regime,
    pn: &Distribution,
    pa: &Distribution,
    m: usize,
    t: usize,
    params: &ExponentParams,
    settings: &SimplexOptimizerSettings,
) -> Result<ExponentReport> {
    check_pair(pn, pa)?;
    let t = if regime.single_outlier() { 1 } else { t };
    check_mt(m, t)?;
    let need = |v: Option<f64>, name: &str| {
        v.ok_or_else(|| Error::InvalidConfig(format!("regime {regime} needs {name}")))
    };
    let b = params.outliers.unwrap_or_else(|| Subset::first(t));
    let mut entries = Vec::new();
    match regime {
        Regime::EpExactOne => entries.push(entry(
            "misclassification",
            exp_ep_exact_one(pn, pa, m)?,
            None,
        )),
        Regime::EstExactOne => entries.push(entry(
            "misclassification",
            exp_est_exact_one(pn, pa, m)?,
            None,
        )),
        Regime::EstExactT => {
            let ld = exp_ld(pn, pa, m, t)?;
            entries.push(entry(
                "misclassification",
                ld.value,
                Some(format!("t={}", ld.argmin_t)),
            ));
        }
        Regime::EstAtmostOne | Regime::EstAtmostT => {
            let l1 = need(params.lambda1, "lambda1")?;
            let l2 = need(params.lambda2, "lambda2")?;
            let upper = lambda_tilde1(pn, pa, m, t, b)?;
            let omega = exp_omega_set(l2, pn, pa, m, b, t, settings)?;
            entries.push(entry("misclassification", Divergence::Finite(l1), None));
            entries.push(entry(
                "false_reject",
                Divergence::Finite(omega.value),
                Some(candidates_text(&omega.candidates)),
            ));
            entries.push(entry("false_alarm", Divergence::Finite(l1), None));
            entries.push(entry(
                "lambda1_upper",
                Divergence::Finite(upper.value),
                Some(upper.argmin.to_string()),
            ));
        }
        Regime::FixLnvOne | Regime::FixLnvT => {
            let e = exp_fixed_lnv_t(pn, pa, m, t, settings)?;
            entries.push(entry(
                "misclassification",
                Divergence::Finite(e.value),
                Some(candidates_text(&e.candidates)),
            ));
        }
        Regime::FixZwhOne | Regime::FixZwhT => {
            let lambda = need(params.lambda, "lambda")?;
            let l = exp_l_set(lambda, pn, pa, m, b, t, settings)?;
            entries.push(entry("misclassification", Divergence::Finite(lambda), None));
            entries.push(entry(
                "false_reject",
                Divergence::Finite(l.value),
                Some(candidates_text(&l.candidates)),
            ));
            entries.push(entry("false_alarm", Divergence::Finite(lambda), None));
        }
    }
    Ok(ExponentReport {
        regime,
        m,
        t,
        entries,
    })
}
