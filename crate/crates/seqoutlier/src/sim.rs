//! Seeded Monte Carlo engine for the tests in [`crate::detectors`].
//!
//! Trial `j` of sweep point `i` draws its data from a generator seeded with
//! `derive_seed(master, [i, j])`, so a trial's outcome never depends on which
//! worker ran it. Aggregation uses integer counters only, which makes reports
//! byte-identical for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::{run, Generative, HypothesisLabel, Regime, TestConfig, Verdict};
use crate::error::{Error, Result};
use crate::exponents::{
    exp_ep_exact_one, exp_est_exact_one, exp_fixed_lnv_t, exp_l_set, exp_ld, exp_omega_set,
    SimplexOptimizerSettings,
};
use crate::prob::{check_same_alphabet, derive_seed, Distribution};
use crate::scoring::Subset;

/// Normal quantile used for the reported 95% intervals.
pub const Z_95: f64 = 1.959_963_984_540_054;

/// Data-generating truth of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub nominal: Distribution,
    pub anomalous: Distribution,
    /// Outlier streams; empty for the all-nominal hypothesis.
    pub outliers: Subset,
}

impl GroundTruth {
    pub fn label(&self) -> HypothesisLabel {
        if self.outliers.is_empty() {
            HypothesisLabel::Null
        } else {
            HypothesisLabel::Outliers(self.outliers)
        }
    }
}

/// A test, a truth and a sweep over `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Test parameters; `test.n` is replaced by each sweep value.
    pub test: TestConfig,
    pub truth: GroundTruth,
    pub trials: u64,
    pub seed: u64,
    pub sweep: Vec<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.sweep.is_empty() {
            return bad("sweep must list at least one n".into());
        }
        check_same_alphabet(&self.truth.nominal, &self.truth.anomalous)?;
        if self.truth.nominal.alphabet_size() != self.test.alphabet_size {
            return bad(format!(
                "distributions have {} symbols but the test expects {}",
                self.truth.nominal.alphabet_size(),
                self.test.alphabet_size
            ));
        }
        for &n in &self.sweep {
            TestConfig {
                n,
                ..self.test.clone()
            }
            .validate()?;
        }
        self.truth.outliers.check_within(self.test.m)?;
        let size = self.truth.outliers.len();
        let budget = self.test.outlier_budget();
        let ok = if self.test.regime.allows_null() {
            size <= budget
        } else {
            size == budget
        };
        if !ok {
            return bad(format!(
                "regime {} cannot have true outlier set {} (budget {budget})",
                self.test.regime, self.truth.outliers
            ));
        }
        Ok(())
    }
}

/// How a single trial ended relative to the truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Correct,
    Misclassified,
    FalseReject,
    FalseAlarm,
    Truncated,
}

/// Classifies a verdict against the truth. Truncated runs are never correct.
pub fn classify(verdict: &Verdict, truth: HypothesisLabel) -> Outcome {
    if verdict.truncated {
        return Outcome::Truncated;
    }
    match (truth, verdict.label) {
        (t, l) if t == l => Outcome::Correct,
        (HypothesisLabel::Null, _) => Outcome::FalseAlarm,
        (_, HypothesisLabel::Null) => Outcome::FalseReject,
        _ => Outcome::Misclassified,
    }
}

/// Trial counts per outcome class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub correct: u64,
    pub misclassified: u64,
    pub false_reject: u64,
    pub false_alarm: u64,
    pub truncated: u64,
}

impl OutcomeCounts {
    fn record(&mut self, o: Outcome) {
        match o {
            Outcome::Correct => self.correct += 1,
            Outcome::Misclassified => self.misclassified += 1,
            Outcome::FalseReject => self.false_reject += 1,
            Outcome::FalseAlarm => self.false_alarm += 1,
            Outcome::Truncated => self.truncated += 1,
        }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            correct: self.correct + o.correct,
            misclassified: self.misclassified + o.misclassified,
            false_reject: self.false_reject + o.false_reject,
            false_alarm: self.false_alarm + o.false_alarm,
            truncated: self.truncated + o.truncated,
        }
    }

    pub fn total(&self) -> u64 {
        self.correct + self.misclassified + self.false_reject + self.false_alarm + self.truncated
    }

    /// Every non-correct trial, truncations included.
    pub fn errors(&self) -> u64 {
        self.total() - self.correct
    }

    /// Compact form such as `mis:3|fr:0|fa:0|trunc:0`.
    pub fn summary(&self) -> String {
        format!(
            "mis:{}|fr:{}|fa:{}|trunc:{}",
            self.misclassified, self.false_reject, self.false_alarm, self.truncated
        )
    }
}

/// Wilson score interval for `successes` out of `trials` at normal quantile `z`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    assert!(trials > 0 && successes <= trials);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Aggregates of one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: u64,
    pub hypothesis: String,
    pub trials: u64,
    pub counts: OutcomeCounts,
    /// Empirical error probability; the Wilson upper bound when no error was
    /// observed.
    pub error_prob: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub mean_tau: f64,
    pub tau_se: f64,
    /// `-ln(error_prob) / mean_tau`.
    pub exponent_estimate: f64,
    /// Set when no error was observed, so the estimate is only a lower bound.
    pub exponent_is_lower_bound: bool,
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub regime: Regime,
    pub m: usize,
    pub t: usize,
    pub seed: u64,
    /// Exponent of the dominant error class predicted for this truth, if it
    /// could be computed and is finite.
    pub theory_exponent: Option<f64>,
    pub points: Vec<SweepPoint>,
}

impl SimulationReport {
    pub fn truncated_fraction(&self) -> f64 {
        let (tr, total) = self
            .points
            .iter()
            .fold((0, 0), |(a, b), p| (a + p.counts.truncated, b + p.trials));
        tr as f64 / total.max(1) as f64
    }
}

#[derive(Clone, Copy, Default)]
struct Tally {
    counts: OutcomeCounts,
    tau_sum: u128,
    tau_sq_sum: u128,
}

impl Tally {
    fn merge(self, o: Self) -> Self {
        Self {
            counts: self.counts.merge(o.counts),
            tau_sum: self.tau_sum + o.tau_sum,
            tau_sq_sum: self.tau_sq_sum + o.tau_sq_sum,
        }
    }
}

fn run_point(cfg: &ExperimentConfig, sweep_index: usize, n: u64) -> Result<Tally> {
    let test = TestConfig {
        n,
        ..cfg.test.clone()
    };
    let truth = cfg.truth.label();
    (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = derive_seed(cfg.seed, &[sweep_index as u64, trial]);
            let mut src = Generative::from_truth(
                &cfg.truth.nominal,
                &cfg.truth.anomalous,
                test.m,
                cfg.truth.outliers,
                seed,
            )?;
            let verdict = run(&mut src, &test)?;
            let mut tally = Tally::default();
            tally.counts.record(classify(&verdict, truth));
            tally.tau_sum = verdict.tau as u128;
            tally.tau_sq_sum = (verdict.tau as u128) * (verdict.tau as u128);
            Ok(tally)
        })
        .try_reduce(Tally::default, |a, b| Ok(a.merge(b)))
}

fn summarize(n: u64, hypothesis: String, trials: u64, tally: Tally) -> SweepPoint {
    let counts = tally.counts;
    let errors = counts.errors();
    let (lo, hi) = wilson_interval(errors, trials, Z_95);
    let zero = errors == 0;
    let error_prob = if zero {
        hi
    } else {
        errors as f64 / trials as f64
    };
    let nt = trials as u128;
    let mean_tau = tally.tau_sum as f64 / trials as f64;
    // Exact integer numerator of the sample variance.
    let tau_se = if trials > 1 {
        let num = (nt * tally.tau_sq_sum - tally.tau_sum * tally.tau_sum) as f64;
        let var = num / (trials as f64 * (trials - 1) as f64);
        (var / trials as f64).sqrt()
    } else {
        0.0
    };
    let exponent_estimate = if mean_tau > 0.0 {
        (-error_prob.ln() / mean_tau).max(0.0)
    } else {
        0.0
    };
    SweepPoint {
        n,
        hypothesis,
        trials,
        counts,
        error_prob,
        wilson_lo: lo,
        wilson_hi: hi,
        mean_tau,
        tau_se,
        exponent_estimate,
        exponent_is_lower_bound: zero,
    }
}

/// Predicted exponent of the overall error probability under the truth.
///
/// At-most regimes report the smaller of the misclassification and
/// false-reject exponents under a non-null truth and the false-alarm
/// exponent under the null.
pub fn theory_exponent(test: &TestConfig, truth: &GroundTruth) -> Result<f64> {
    let (pn, pa) = (&truth.nominal, &truth.anomalous);
    let settings = SimplexOptimizerSettings::default();
    let (m, t, b) = (test.m, test.outlier_budget(), truth.outliers);
    let need = |v: Option<f64>| v.ok_or_else(|| Error::InvalidConfig("missing threshold".into()));
    Ok(match test.regime {
        Regime::EpExactOne => exp_ep_exact_one(pn, pa, m)?.value(),
        Regime::EstExactOne => exp_est_exact_one(pn, pa, m)?.value(),
        Regime::EstExactT => exp_ld(pn, pa, m, t)?.value.value(),
        Regime::FixLnvOne | Regime::FixLnvT => exp_fixed_lnv_t(pn, pa, m, t, &settings)?.value,
        Regime::EstAtmostOne | Regime::EstAtmostT => {
            let l1 = need(test.lambda1)?;
            if b.is_empty() {
                l1
            } else {
                l1.min(exp_omega_set(need(test.lambda2)?, pn, pa, m, b, t, &settings)?.value)
            }
        }
        Regime::FixZwhOne | Regime::FixZwhT => {
            let l = need(test.lambda)?;
            if b.is_empty() {
                l
            } else {
                l.min(exp_l_set(l, pn, pa, m, b, t, &settings)?.value)
            }
        }
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Runs every sweep point of `cfg` on `workers` threads, largest `n` first.
/// Points are reported in configuration order.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<SimulationReport> {
    cfg.validate()?;
    let pool = pool(workers)?;
    let mut order: Vec<usize> = (0..cfg.sweep.len()).collect();
    order.sort_by(|&a, &b| cfg.sweep[b].cmp(&cfg.sweep[a]).then(a.cmp(&b)));
    let hypothesis = cfg.truth.label().to_string();
    let mut points: Vec<Option<SweepPoint>> = vec![None; cfg.sweep.len()];
    for i in order {
        let n = cfg.sweep[i];
        let tally = pool.install(|| run_point(cfg, i, n))?;
        points[i] = Some(summarize(n, hypothesis.clone(), cfg.trials, tally));
    }
    Ok(SimulationReport {
        regime: cfg.test.regime,
        m: cfg.test.m,
        t: cfg.test.outlier_budget(),
        seed: cfg.seed,
        theory_exponent: theory_exponent(&cfg.test, &cfg.truth)
            .ok()
            .filter(|v| v.is_finite()),
        points: points
            .into_iter()
            .map(|p| p.expect("every point ran"))
            .collect(),
    })
}

/// One distribution pair of a universality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalityRow {
    pub nominal: Distribution,
    pub anomalous: Distribution,
    pub n: u64,
    pub mean_tau: f64,
    pub tau_se: f64,
    /// `mean_tau <= n + 2 * tau_se`.
    pub pass: bool,
}

/// Checks the expected-stopping-time constraint `E[tau] <= n` of a
/// stopping-time-constrained test across distribution pairs.
pub fn estimate_universality(
    test: &TestConfig,
    pairs: &[(Distribution, Distribution)],
    outliers: Subset,
    trials: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<UniversalityRow>> {
    if !test.regime.is_stopping_time_constrained() {
        return Err(Error::InvalidConfig(format!(
            "regime {} has no expected stopping time constraint",
            test.regime
        )));
    }
    pairs
        .iter()
        .enumerate()
        .map(|(k, (pn, pa))| {
            let cfg = ExperimentConfig {
                test: test.clone(),
                truth: GroundTruth {
                    nominal: pn.clone(),
                    anomalous: pa.clone(),
                    outliers,
                },
                trials,
                seed: derive_seed(seed, &[k as u64]),
                sweep: vec![test.n],
            };
            let p = run_experiment(&cfg, workers)?.points.remove(0);
            Ok(UniversalityRow {
                nominal: pn.clone(),
                anomalous: pa.clone(),
                n: test.n,
                mean_tau: p.mean_tau,
                tau_se: p.tau_se,
                pass: p.mean_tau <= test.n as f64 + 2.0 * p.tau_se,
            })
        })
        .collect()
}

/// Sequential and fixed-length results at a matched sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub sequential: SweepPoint,
    /// Fixed length, the sequential mean stopping time rounded.
    pub fixed_n: u64,
    pub fixed: SweepPoint,
}

/// Runs `cfg` and, at each sweep point, the fixed-length test `fixed_regime`
/// with length equal to the sequential mean stopping time.
pub fn compare_tests(
    cfg: &ExperimentConfig,
    fixed_regime: Regime,
    lambda: Option<f64>,
    workers: usize,
) -> Result<Vec<ComparisonRow>> {
    if !fixed_regime.is_fixed_length() {
        return Err(Error::InvalidConfig(format!(
            "{fixed_regime} is not a fixed-length regime"
        )));
    }
    let seq = run_experiment(cfg, workers)?;
    let fixed_n: Vec<u64> = seq
        .points
        .iter()
        .map(|p| (p.mean_tau.round() as u64).max(1))
        .collect();
    let fixed_cfg = ExperimentConfig {
        test: TestConfig {
            regime: fixed_regime,
            lambda,
            ..TestConfig::fixed(
                fixed_regime,
                cfg.test.m,
                cfg.test.t,
                cfg.test.alphabet_size,
                1,
            )
        },
        truth: cfg.truth.clone(),
        trials: cfg.trials,
        seed: derive_seed(cfg.seed, &[u64::MAX]),
        sweep: fixed_n.clone(),
    };
    let fixed = run_experiment(&fixed_cfg, workers)?;
    Ok(seq
        .points
        .into_iter()
        .zip(fixed.points)
        .zip(fixed_n)
        .map(|((sequential, fixed), fixed_n)| ComparisonRow {
            sequential,
            fixed_n,
            fixed,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(p: f64) -> Distribution {
        Distribution::bernoulli(p).unwrap()
    }

    fn truth(pn: f64, pa: f64, outliers: Subset) -> GroundTruth {
        GroundTruth {
            nominal: b(pn),
            anomalous: b(pa),
            outliers,
        }
    }

    #[test]
    fn wilson_matches_reference_values() {
        // 0 of 100: upper bound z^2/(n+z^2).
        let (lo, hi) = wilson_interval(0, 100, Z_95);
        assert!(lo < 1e-15);
        assert!((hi - Z_95 * Z_95 / (100.0 + Z_95 * Z_95)).abs() < 1e-12);
        let (lo, hi) = wilson_interval(50, 100, Z_95);
        assert!((lo - 0.40383).abs() < 1e-4 && (hi - 0.59617).abs() < 1e-4);
    }

    #[test]
    fn classification_rules() {
        let v = |label, truncated| Verdict {
            label,
            tau: 5,
            final_scores: vec![],
            truncated,
        };
        let s = HypothesisLabel::Outliers(Subset::singleton(0));
        let o = HypothesisLabel::Outliers(Subset::singleton(1));
        assert_eq!(classify(&v(s, false), s), Outcome::Correct);
        assert_eq!(classify(&v(s, true), s), Outcome::Truncated);
        assert_eq!(classify(&v(o, false), s), Outcome::Misclassified);
        assert_eq!(
            classify(&v(HypothesisLabel::Null, false), s),
            Outcome::FalseReject
        );
        assert_eq!(
            classify(&v(s, false), HypothesisLabel::Null),
            Outcome::FalseAlarm
        );
        assert_eq!(
            classify(&v(HypothesisLabel::Null, false), HypothesisLabel::Null),
            Outcome::Correct
        );
    }

    #[test]
    fn degenerate_single_trial_is_deterministic() {
        let cfg = ExperimentConfig {
            test: TestConfig::est_exact_one(3, 2, 5),
            truth: truth(0.0, 1.0, Subset::singleton(2)),
            trials: 1,
            seed: 7,
            sweep: vec![5],
        };
        let r = run_experiment(&cfg, 1).unwrap();
        let p = &r.points[0];
        assert_eq!(p.counts.correct, 1);
        assert_eq!(p.mean_tau, 4.0);
        assert!(p.exponent_is_lower_bound);
        assert_eq!(p.hypothesis, "H_3");
    }

    #[test]
    fn invalid_truth_is_rejected() {
        let mut cfg = ExperimentConfig {
            test: TestConfig::est_exact_one(4, 2, 10),
            truth: truth(0.3, 0.1, Subset::EMPTY),
            trials: 10,
            seed: 1,
            sweep: vec![10],
        };
        assert!(run_experiment(&cfg, 1).is_err());
        cfg.truth.outliers = Subset::from_indices(&[0, 1]).unwrap();
        assert!(run_experiment(&cfg, 1).is_err());
        cfg.truth.outliers = Subset::singleton(0);
        cfg.trials = 0;
        assert!(run_experiment(&cfg, 1).is_err());
    }

    #[test]
    fn report_is_independent_of_worker_count() {
        let cfg = ExperimentConfig {
            test: TestConfig::est_atmost_one(4, 2, 30, 0.05, 0.01),
            truth: truth(0.3, 0.1, Subset::singleton(1)),
            trials: 200,
            seed: 42,
            sweep: vec![10, 30],
        };
        let a = serde_json::to_string(&run_experiment(&cfg, 1).unwrap()).unwrap();
        let b = serde_json::to_string(&run_experiment(&cfg, 4).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn universality_rejects_ep() {
        let test = TestConfig::ep_exact_one(4, 2, 0.1);
        let err = estimate_universality(&test, &[(b(0.3), b(0.1))], Subset::singleton(0), 10, 1, 1);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }
}
