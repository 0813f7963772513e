//! Sequential and fixed-length outlier tests.
//!
//! Every sequential test pulls one column per step from an
//! [`ObservationSource`], recomputes all candidate scores and applies its
//! stopping rule. Loops are capped at `k_max` columns; a capped run is
//! reported with `truncated = true`.
//!
//! Ties between equal minimal scores go to the earliest candidate in
//! [`CandidateSet`] order (lowest index, then lexicographic).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{Distribution, Rng, Sampler};
use crate::scoring::{
    max_outliers, threshold_f, threshold_g, CandidateMode, CandidateSet, DistributionTuple,
    ObservationMatrix, Subset, TypeCounts, MAX_STREAMS,
};

/// Default cap on the number of columns a sequential test may consume.
pub const DEFAULT_K_MAX: u64 = 1_000_000;

/// A stream of observation columns, one symbol per row per step.
pub trait ObservationSource {
    fn num_rows(&self) -> usize;
    fn alphabet_size(&self) -> usize;
    /// Writes the next column into `column`; returns `false` when exhausted.
    fn next_column(&mut self, column: &mut [usize]) -> bool;
}

/// Replays a recorded matrix column by column.
#[derive(Debug, Clone)]
pub struct Replay<'a> {
    obs: &'a ObservationMatrix,
    pos: usize,
}

impl<'a> Replay<'a> {
    pub fn new(obs: &'a ObservationMatrix) -> Self {
        Self { obs, pos: 0 }
    }
}

impl ObservationSource for Replay<'_> {
    fn num_rows(&self) -> usize {
        self.obs.num_rows()
    }

    fn alphabet_size(&self) -> usize {
        self.obs.alphabet_size()
    }

    fn next_column(&mut self, column: &mut [usize]) -> bool {
        if self.pos >= self.obs.len() {
            return false;
        }
        for (c, row) in column.iter_mut().zip(self.obs.rows()) {
            *c = row[self.pos];
        }
        self.pos += 1;
        true
    }
}

/// Draws fresh i.i.d. columns from a distribution tuple.
#[derive(Debug, Clone)]
pub struct Generative {
    samplers: Vec<Sampler>,
    alphabet_size: usize,
    rng: Rng,
}

impl Generative {
    pub fn new(tuple: &DistributionTuple, seed: u64) -> Self {
        Self {
            samplers: tuple.entries().iter().map(Sampler::new).collect(),
            alphabet_size: tuple.alphabet_size(),
            rng: Rng::new(seed),
        }
    }

    /// Rows in `outliers` follow `pa`, the others `pn`.
    pub fn from_truth(
        pn: &Distribution,
        pa: &Distribution,
        m: usize,
        outliers: Subset,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self::new(
            &DistributionTuple::plug_in(pn, pa, m, outliers)?,
            seed,
        ))
    }

    /// Collects the next `n` columns into a matrix.
    pub fn take_matrix(&mut self, n: usize) -> ObservationMatrix {
        let mut obs = ObservationMatrix::new(self.num_rows(), self.alphabet_size);
        let mut column = vec![0; self.num_rows()];
        for _ in 0..n {
            self.next_column(&mut column);
            obs.push_column(&column)
                .expect("sampler yields in-range symbols");
        }
        obs
    }
}

impl ObservationSource for Generative {
    fn num_rows(&self) -> usize {
        self.samplers.len()
    }

    fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    fn next_column(&mut self, column: &mut [usize]) -> bool {
        for (c, s) in column.iter_mut().zip(&self.samplers) {
            *c = s.draw(&mut self.rng);
        }
        true
    }
}

/// Which test to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    EpExactOne,
    EstExactOne,
    EstExactT,
    EstAtmostOne,
    EstAtmostT,
    FixLnvOne,
    FixLnvT,
    FixZwhOne,
    FixZwhT,
}

impl Regime {
    pub const ALL: [Regime; 9] = [
        Regime::EpExactOne,
        Regime::EstExactOne,
        Regime::EstExactT,
        Regime::EstAtmostOne,
        Regime::EstAtmostT,
        Regime::FixLnvOne,
        Regime::FixLnvT,
        Regime::FixZwhOne,
        Regime::FixZwhT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::EpExactOne => "ep-exact-one",
            Regime::EstExactOne => "est-exact-one",
            Regime::EstExactT => "est-exact-t",
            Regime::EstAtmostOne => "est-atmost-one",
            Regime::EstAtmostT => "est-atmost-t",
            Regime::FixLnvOne => "fix-lnv-one",
            Regime::FixLnvT => "fix-lnv-t",
            Regime::FixZwhOne => "fix-zwh-one",
            Regime::FixZwhT => "fix-zwh-t",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s))
    }

    /// Exactly one outlier is assumed.
    pub fn single_outlier(self) -> bool {
        matches!(
            self,
            Regime::EpExactOne
                | Regime::EstExactOne
                | Regime::EstAtmostOne
                | Regime::FixLnvOne
                | Regime::FixZwhOne
        )
    }

    /// The null hypothesis (no outlier) is admissible.
    pub fn allows_null(self) -> bool {
        matches!(
            self,
            Regime::EstAtmostOne | Regime::EstAtmostT | Regime::FixZwhOne | Regime::FixZwhT
        )
    }

    pub fn is_sequential(self) -> bool {
        !self.is_fixed_length()
    }

    pub fn is_fixed_length(self) -> bool {
        matches!(
            self,
            Regime::FixLnvOne | Regime::FixLnvT | Regime::FixZwhOne | Regime::FixZwhT
        )
    }

    /// Sequential tests whose minimum stopping time is `n - 1`.
    pub fn is_stopping_time_constrained(self) -> bool {
        self.is_sequential() && self != Regime::EpExactOne
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters of a single test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub regime: Regime,
    pub m: usize,
    pub t: usize,
    pub alphabet_size: usize,
    /// Target error probability (EP test).
    pub beta: Option<f64>,
    /// Minimum stopping time plus one for sequential tests; sample length for
    /// fixed-length tests.
    pub n: u64,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    /// Rejection threshold of the fixed-length at-most tests.
    pub lambda: Option<f64>,
    pub k_max: u64,
}

impl TestConfig {
    fn base(regime: Regime, m: usize, alphabet_size: usize) -> Self {
        Self {
            regime,
            m,
            t: 1,
            alphabet_size,
            beta: None,
            n: 2,
            lambda1: None,
            lambda2: None,
            lambda: None,
            k_max: DEFAULT_K_MAX,
        }
    }

    pub fn ep_exact_one(m: usize, alphabet_size: usize, beta: f64) -> Self {
        Self {
            beta: Some(beta),
            n: 1,
            ..Self::base(Regime::EpExactOne, m, alphabet_size)
        }
    }

    pub fn est_exact_one(m: usize, alphabet_size: usize, n: u64) -> Self {
        Self {
            n,
            ..Self::base(Regime::EstExactOne, m, alphabet_size)
        }
    }

    pub fn est_exact_t(m: usize, t: usize, alphabet_size: usize, n: u64) -> Self {
        Self {
            n,
            t,
            ..Self::base(Regime::EstExactT, m, alphabet_size)
        }
    }

    pub fn est_atmost_one(
        m: usize,
        alphabet_size: usize,
        n: u64,
        lambda1: f64,
        lambda2: f64,
    ) -> Self {
        Self {
            n,
            lambda1: Some(lambda1),
            lambda2: Some(lambda2),
            ..Self::base(Regime::EstAtmostOne, m, alphabet_size)
        }
    }

    pub fn est_atmost_t(
        m: usize,
        t: usize,
        alphabet_size: usize,
        n: u64,
        lambda1: f64,
        lambda2: f64,
    ) -> Self {
        Self {
            t,
            ..Self::est_atmost_one(m, alphabet_size, n, lambda1, lambda2)
        }
        .with_regime(Regime::EstAtmostT)
    }

    pub fn fixed(regime: Regime, m: usize, t: usize, alphabet_size: usize, n: u64) -> Self {
        Self {
            n,
            t,
            ..Self::base(regime, m, alphabet_size)
        }
    }

    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self
    }

    pub fn with_k_max(mut self, k_max: u64) -> Self {
        self.k_max = k_max;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = Some(lambda);
        self
    }

    /// Outlier budget in effect: 1 for single-outlier regimes, `t` otherwise.
    pub fn outlier_budget(&self) -> usize {
        if self.regime.single_outlier() {
            1
        } else {
            self.t
        }
    }

    pub fn candidates(&self) -> Result<CandidateSet> {
        let mode = if self.regime.allows_null() {
            CandidateMode::AtMost
        } else {
            CandidateMode::Exact
        };
        CandidateSet::new(self.m, self.outlier_budget(), mode)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m < 3 || self.m > MAX_STREAMS {
            return bad(format!("M = {} must lie in 3..={MAX_STREAMS}", self.m));
        }
        if self.alphabet_size < 2 {
            return bad(format!(
                "alphabet size {} must be at least 2",
                self.alphabet_size
            ));
        }
        let t = self.outlier_budget();
        if t == 0 || t > max_outliers(self.m) {
            return bad(format!(
                "T = {t} must lie in 1..={} for M = {}",
                max_outliers(self.m),
                self.m
            ));
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.regime.is_sequential() && self.k_max <= self.n {
            return bad(format!("k_max = {} must exceed n = {}", self.k_max, self.n));
        }
        match self.regime {
            Regime::EpExactOne => match self.beta {
                Some(b) if b > 0.0 && b < 1.0 => {}
                other => return bad(format!("beta must lie in (0,1), got {other:?}")),
            },
            Regime::EstAtmostOne | Regime::EstAtmostT => match (self.lambda1, self.lambda2) {
                (Some(l1), Some(l2)) if l2 > 0.0 && l2 < l1 && l1.is_finite() => {}
                other => return bad(format!("need 0 < lambda2 < lambda1, got {other:?}")),
            },
            Regime::FixZwhOne | Regime::FixZwhT => match self.lambda {
                Some(l) if l > 0.0 && l.is_finite() => {}
                other => return bad(format!("need lambda > 0, got {other:?}")),
            },
            _ => {}
        }
        Ok(())
    }
}

/// Outcome of a test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisLabel {
    /// The given streams are declared outliers.
    Outliers(Subset),
    /// No outlier.
    Null,
    Undecided,
}

impl fmt::Display for HypothesisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HypothesisLabel::Outliers(s) if s.len() == 1 => {
                write!(f, "H_{}", s.members()[0] + 1)
            }
            HypothesisLabel::Outliers(s) => write!(f, "H_{s}"),
            HypothesisLabel::Null => write!(f, "H_r"),
            HypothesisLabel::Undecided => write!(f, "undecided"),
        }
    }
}

/// A candidate with its score at the stopping time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate: Subset,
    pub score: f64,
}

/// Result of one test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: HypothesisLabel,
    /// Number of columns consumed.
    pub tau: u64,
    pub final_scores: Vec<CandidateScore>,
    /// The `k_max` cap (or source exhaustion) ended the run.
    pub truncated: bool,
}

impl Verdict {
    pub fn score_of(&self, candidate: Subset) -> Option<f64> {
        self.final_scores
            .iter()
            .find(|c| c.candidate == candidate)
            .map(|c| c.score)
    }
}

fn argmin(scores: &[f64]) -> usize {
    // Strict comparison keeps the first index among ties.
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    best
}

fn min_excluding(scores: &[f64], skip: usize) -> f64 {
    scores
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, &s)| s)
        .fold(f64::INFINITY, f64::min)
}

fn pack(candidates: &[Subset], scores: &[f64]) -> Vec<CandidateScore> {
    candidates
        .iter()
        .zip(scores)
        .map(|(&candidate, &score)| CandidateScore { candidate, score })
        .collect()
}

fn check_source(src: &dyn ObservationSource, cfg: &TestConfig, expected: &[Regime]) -> Result<()> {
    cfg.validate()?;
    if !expected.contains(&cfg.regime) {
        return Err(Error::InvalidConfig(format!(
            "regime {} not handled by this test",
            cfg.regime
        )));
    }
    if src.num_rows() != cfg.m || src.alphabet_size() != cfg.alphabet_size {
        return Err(Error::InvalidConfig(format!(
            "source has {} rows over {} symbols, config expects {} over {}",
            src.num_rows(),
            src.alphabet_size(),
            cfg.m,
            cfg.alphabet_size
        )));
    }
    Ok(())
}

/// Shared sequential loop. `rule` sees `(k, scores)` from `min_k` on and
/// returns a label to stop; `fallback` labels a capped run.
fn run_sequential(
    src: &mut dyn ObservationSource,
    cfg: &TestConfig,
    candidates: &[Subset],
    min_k: u64,
    mut rule: impl FnMut(u64, &[f64]) -> Result<Option<HypothesisLabel>>,
    fallback: impl Fn(&[f64]) -> HypothesisLabel,
) -> Result<Verdict> {
    let mut counts = TypeCounts::new(cfg.m, cfg.alphabet_size);
    let mut column = vec![0usize; cfg.m];
    let mut scores = vec![0.0; candidates.len()];
    let rescore = |counts: &TypeCounts, scores: &mut [f64]| {
        for (s, &c) in scores.iter_mut().zip(candidates) {
            *s = counts.score(c);
        }
    };
    while counts.len() < cfg.k_max {
        if !src.next_column(&mut column) {
            break;
        }
        counts.push(&column)?;
        let k = counts.len();
        if k < min_k {
            continue;
        }
        rescore(&counts, &mut scores);
        if let Some(label) = rule(k, &scores)? {
            return Ok(Verdict {
                label,
                tau: k,
                final_scores: pack(candidates, &scores),
                truncated: false,
            });
        }
    }
    if counts.is_empty() {
        return Err(Error::InvalidConfig(
            "observation source yielded no columns".into(),
        ));
    }
    rescore(&counts, &mut scores);
    Ok(Verdict {
        label: fallback(&scores),
        tau: counts.len(),
        final_scores: pack(candidates, &scores),
        truncated: true,
    })
}

fn argmin_label(candidates: &[Subset]) -> impl Fn(&[f64]) -> HypothesisLabel + '_ {
    move |scores| HypothesisLabel::Outliers(candidates[argmin(scores)])
}

/// Error-probability-constrained test for exactly one outlier.
///
/// Stops at the first `k` where at least `M-1` scores exceed `g(beta, k)` and
/// declares the remaining stream; if all `M` exceed it, the minimum-score
/// stream is declared.
pub fn run_ep_exact_one(src: &mut dyn ObservationSource, cfg: &TestConfig) -> Result<Verdict> {
    check_source(src, cfg, &[Regime::EpExactOne])?;
    let candidates = cfg.candidates()?;
    let candidates = candidates.members();
    let beta = cfg.beta.expect("validated");
    let m = cfg.m;
    run_sequential(
        src,
        cfg,
        candidates,
        1,
        |k, scores| {
            let g = threshold_g(beta, k, m, cfg.alphabet_size)?;
            let above = scores.iter().filter(|&&s| s > g).count();
            Ok(match above {
                a if a == m => Some(HypothesisLabel::Outliers(candidates[argmin(scores)])),
                a if a + 1 == m => {
                    let i = scores
                        .iter()
                        .position(|&s| s <= g)
                        .expect("one score at or below g");
                    Some(HypothesisLabel::Outliers(candidates[i]))
                }
                _ => None,
            })
        },
        argmin_label(candidates),
    )
}

fn run_est_exact(
    src: &mut dyn ObservationSource,
    cfg: &TestConfig,
    regime: Regime,
) -> Result<Verdict> {
    check_source(src, cfg, &[regime])?;
    let candidates = cfg.candidates()?;
    let candidates = candidates.members();
    let (m, a) = (cfg.m, cfg.alphabet_size);
    run_sequential(
        src,
        cfg,
        candidates,
        cfg.n.saturating_sub(1).max(1),
        |k, scores| {
            let best = argmin(scores);
            Ok((scores[best] <= threshold_f(k, m, a))
                .then(|| HypothesisLabel::Outliers(candidates[best])))
        },
        argmin_label(candidates),
    )
}

/// Stopping-time-constrained test for exactly one outlier.
///
/// Stops at the first `k >= n-1` where the minimum score is at most `f(k)`
/// and declares its stream.
pub fn run_est_exact_one(src: &mut dyn ObservationSource, cfg: &TestConfig) -> Result<Verdict> {
    run_est_exact(src, cfg, Regime::EstExactOne)
}

/// Stopping-time-constrained test for exactly `T` outliers.
pub fn run_est_exact_t(src: &mut dyn ObservationSource, cfg: &TestConfig) -> Result<Verdict> {
    run_est_exact(src, cfg, Regime::EstExactT)
}

fn run_atmost(
    src: &mut dyn ObservationSource,
    cfg: &TestConfig,
    regime: Regime,
) -> Result<Verdict> {
    check_source(src, cfg, &[regime])?;
    let candidates = cfg.candidates()?;
    let candidates = candidates.members();
    let l1 = cfg.lambda1.expect("validated");
    let l2 = cfg.lambda2.expect("validated");
    run_sequential(
        src,
        cfg,
        candidates,
        cfg.n.saturating_sub(1).max(1),
        |_, scores| {
            let best = argmin(scores);
            if scores[best] <= l2 && min_excluding(scores, best) > l1 {
                return Ok(Some(HypothesisLabel::Outliers(candidates[best])));
            }
            Ok(scores
                .iter()
                .all(|&s| s <= l2)
                .then_some(HypothesisLabel::Null))
        },
        |_| HypothesisLabel::Null,
    )
}

/// Stopping-time-constrained test for at most one outlier.
///
/// Stops once one score is at most `lambda2` while all others exceed
/// `lambda1` (declare that stream), or once every score is at most `lambda2`
/// (declare no outlier).
pub fn run_atmost_one(src: &mut dyn ObservationSource, cfg: &TestConfig) -> Result<Verdict> {
    run_atmost(src, cfg, Regime::EstAtmostOne)
}

/// [`run_atmost_one`] over all candidate sets of size `1..=T`.
pub fn run_atmost_t(src: &mut dyn ObservationSource, cfg: &TestConfig) -> Result<Verdict> {
    run_atmost(src, cfg, Regime::EstAtmostT)
}

fn fixed_scores(
    obs: &ObservationMatrix,
    t: usize,
    mode: CandidateMode,
    li: bool,
) -> Result<(Vec<Subset>, Vec<f64>)> {
    if obs.num_rows() < 3 {
        return Err(Error::InvalidConfig(
            "fixed-length tests need at least 3 rows".into(),
        ));
    }
    if obs.is_empty() {
        return Err(Error::InvalidConfig("empty observation matrix".into()));
    }
    let candidates = CandidateSet::new(obs.num_rows(), t, mode)?
        .members()
        .to_vec();
    let counts = obs.counts();
    let scores = candidates
        .iter()
        .map(|&c| {
            if li {
                counts.score_li(c)
            } else {
                counts.score(c)
            }
        })
        .collect();
    Ok((candidates, scores))
}

fn fixed_verdict(
    obs: &ObservationMatrix,
    label: HypothesisLabel,
    candidates: &[Subset],
    scores: &[f64],
) -> Verdict {
    Verdict {
        label,
        tau: obs.len() as u64,
        final_scores: pack(candidates, scores),
        truncated: false,
    }
}

fn fixed_argmin(obs: &ObservationMatrix, t: usize) -> Result<Verdict> {
    let (candidates, scores) = fixed_scores(obs, t, CandidateMode::Exact, true)?;
    let label = HypothesisLabel::Outliers(candidates[argmin(&scores)]);
    Ok(fixed_verdict(obs, label, &candidates, &scores))
}

fn fixed_reject(obs: &ObservationMatrix, t: usize, lambda: f64) -> Result<Verdict> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda = {lambda} must be positive"
        )));
    }
    let (candidates, scores) = fixed_scores(obs, t, CandidateMode::AtMost, false)?;
    let best = argmin(&scores);
    let label = if min_excluding(&scores, best) > lambda {
        HypothesisLabel::Outliers(candidates[best])
    } else {
        HypothesisLabel::Null
    };
    Ok(fixed_verdict(obs, label, &candidates, &scores))
}

/// Fixed-length minimum-score test for exactly one outlier.
pub fn run_fixed_lnv_one(obs: &ObservationMatrix) -> Result<Verdict> {
    fixed_argmin(obs, 1)
}

/// Fixed-length test for exactly `T` outliers: minimises the nominal-group
/// spread over all size-`T` candidates.
pub fn run_fixed_lnv_t(obs: &ObservationMatrix, t: usize) -> Result<Verdict> {
    fixed_argmin(obs, t)
}

/// Fixed-length test for at most one outlier: declares the minimum-score
/// stream when every other score exceeds `lambda`, otherwise no outlier.
pub fn run_fixed_zwh_one(obs: &ObservationMatrix, lambda: f64) -> Result<Verdict> {
    fixed_reject(obs, 1, lambda)
}

/// [`run_fixed_zwh_one`] over candidates of size `1..=T`.
pub fn run_fixed_zwh_t(obs: &ObservationMatrix, t: usize, lambda: f64) -> Result<Verdict> {
    fixed_reject(obs, t, lambda)
}

/// Runs the test selected by `cfg.regime`. Fixed-length regimes first draw
/// `cfg.n` columns from the source.
pub fn run(src: &mut dyn ObservationSource, cfg: &TestConfig) -> Result<Verdict> {
    match cfg.regime {
        Regime::EpExactOne => run_ep_exact_one(src, cfg),
        Regime::EstExactOne => run_est_exact_one(src, cfg),
        Regime::EstExactT => run_est_exact_t(src, cfg),
        Regime::EstAtmostOne => run_atmost_one(src, cfg),
        Regime::EstAtmostT => run_atmost_t(src, cfg),
        fixed => {
            check_source(src, cfg, &[fixed])?;
            let mut obs = ObservationMatrix::new(cfg.m, cfg.alphabet_size);
            let mut column = vec![0; cfg.m];
            for _ in 0..cfg.n {
                if !src.next_column(&mut column) {
                    return Err(Error::InvalidConfig(format!(
                        "source exhausted before {} columns",
                        cfg.n
                    )));
                }
                obs.push_column(&column)?;
            }
            let t = cfg.outlier_budget();
            match fixed {
                Regime::FixLnvOne => run_fixed_lnv_one(&obs),
                Regime::FixLnvT => run_fixed_lnv_t(&obs, t),
                Regime::FixZwhOne => run_fixed_zwh_one(&obs, cfg.lambda.expect("validated")),
                _ => run_fixed_zwh_t(&obs, t, cfg.lambda.expect("validated")),
            }
        }
    }
}
