//! TOML configuration files for `simulate` and `compare`.
//!
//! Parsing is strict: unknown keys are rejected and every value is checked
//! against the library's own validation before any work starts. Errors name
//! the offending key and, where it can be found, its line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use seqoutlier::detectors::{Regime, TestConfig, DEFAULT_K_MAX};
use seqoutlier::prob::Distribution;
use seqoutlier::scoring::Subset;
use seqoutlier::sim::{ExperimentConfig, GroundTruth};

use crate::CliError;

/// Mass tolerance for user-supplied distributions before renormalisation.
pub const MASS_TOLERANCE: f64 = 1e-9;

fn one() -> usize {
    1
}

/// Parameters of a Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub regime: Regime,
    pub m: usize,
    #[serde(default = "one")]
    pub t: usize,
    pub pn: Vec<f64>,
    pub pa: Vec<f64>,
    /// True outlier streams, 1-based; empty for the all-nominal truth.
    #[serde(default)]
    pub outliers: Vec<usize>,
    pub trials: u64,
    pub sweep: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<u64>,
}

/// Optional Monte Carlo part of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub trials: u64,
    pub sweep: Vec<u64>,
    #[serde(default)]
    pub outliers: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    /// Threshold of the fixed-length at-most test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<u64>,
}

/// A sequential test set against a fixed-length one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub sequential: Regime,
    pub fixed: Regime,
    pub m: usize,
    #[serde(default = "one")]
    pub t: usize,
    pub pn: Vec<f64>,
    pub pa: Vec<f64>,
    /// Outlier set the Bayesian exponents are evaluated at; all candidates
    /// of size `1..=t` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outliers: Option<Vec<usize>>,
    /// Second threshold of the sequential at-most test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monte_carlo: Option<MonteCarloSection>,
}

/// Source text kept alongside the parsed value for error locations.
pub struct Loaded<T> {
    pub value: T,
    text: String,
    path: String,
}

impl<T> Loaded<T> {
    /// A config error pointing at `key` if it appears in the file.
    pub fn error_at(&self, key: &str, msg: impl std::fmt::Display) -> CliError {
        match line_of(&self.text, key) {
            Some(line) => CliError::Config(format!("{}:{line}: {key}: {msg}", self.path)),
            None => CliError::Config(format!("{}: {key}: {msg}", self.path)),
        }
    }
}

/// First line (1-based) on which `key` is assigned or opens a table.
pub fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start();
            let assigned = l
                .strip_prefix(key)
                .map(|rest| rest.trim_start().starts_with('='))
                .unwrap_or(false);
            assigned || l.trim_end() == format!("[{key}]")
        })
        .map(|i| i + 1)
}

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Loaded<T>, CliError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{shown}: cannot read: {e}")))?;
    parse(&text, &shown)
}

pub fn parse<T: for<'de> Deserialize<'de>>(text: &str, path: &str) -> Result<Loaded<T>, CliError> {
    let value = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let msg = e.message().to_string();
        match line {
            Some(line) => CliError::Config(format!("{path}:{line}: {msg}")),
            None => CliError::Config(format!("{path}: {msg}")),
        }
    })?;
    Ok(Loaded {
        value,
        text: text.to_string(),
        path: path.to_string(),
    })
}

/// Parses `"0.8,0.2"` into a renormalised distribution.
pub fn parse_distribution(text: &str) -> Result<Distribution, String> {
    let probs = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("{s:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Distribution::normalized(probs, MASS_TOLERANCE).map_err(|e| e.to_string())
}

/// Parses `"1,2"` into a subset of 1-based stream indices.
pub fn parse_outliers(text: &str) -> Result<Vec<usize>, String> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

/// Converts 1-based indices to a [`Subset`] within `m` streams.
pub fn subset(one_based: &[usize], m: usize) -> Result<Subset, String> {
    if let Some(&bad) = one_based.iter().find(|&&i| i == 0 || i > m) {
        return Err(format!("stream index {bad} outside 1..={m}"));
    }
    let zero: Vec<usize> = one_based.iter().map(|i| i - 1).collect();
    Subset::from_indices(&zero).map_err(|e| e.to_string())
}

fn distribution<T>(loaded: &Loaded<T>, key: &str, probs: &[f64]) -> Result<Distribution, CliError> {
    Distribution::normalized(probs.to_vec(), MASS_TOLERANCE).map_err(|e| loaded.error_at(key, e))
}

/// Key most likely responsible for a library validation message.
fn blame(msg: &str) -> &'static str {
    const KEYS: [(&str, &str); 8] = [
        ("lambda2", "lambda2"),
        ("lambda1", "lambda1"),
        ("lambda", "lambda"),
        ("beta", "beta"),
        ("k_max", "k_max"),
        ("T =", "t"),
        ("M =", "m"),
        ("outlier", "outliers"),
    ];
    KEYS.iter()
        .find(|(needle, _)| msg.contains(needle))
        .map(|(_, key)| *key)
        .unwrap_or("sweep")
}

/// Fields shared by the simulate config and a comparison's Monte Carlo part.
pub struct ExperimentFields<'a> {
    pub regime: Regime,
    pub m: usize,
    pub t: usize,
    pub pn: &'a [f64],
    pub pa: &'a [f64],
    pub outliers: &'a [usize],
    pub trials: u64,
    pub sweep: &'a [u64],
    pub beta: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda: Option<f64>,
    pub k_max: Option<u64>,
}

impl ExperimentFields<'_> {
    /// Builds and validates the library experiment.
    pub fn build<T>(&self, loaded: &Loaded<T>, seed: u64) -> Result<ExperimentConfig, CliError> {
        let nominal = distribution(loaded, "pn", self.pn)?;
        let anomalous = distribution(loaded, "pa", self.pa)?;
        if nominal.alphabet_size() != anomalous.alphabet_size() {
            return Err(loaded.error_at("pa", "alphabet size differs from pn"));
        }
        let outliers = subset(self.outliers, self.m).map_err(|e| loaded.error_at("outliers", e))?;
        if self.trials == 0 {
            return Err(loaded.error_at("trials", "must be at least 1"));
        }
        if self.sweep.is_empty() {
            return Err(loaded.error_at("sweep", "must list at least one n"));
        }
        let test = TestConfig {
            regime: self.regime,
            m: self.m,
            t: if self.regime.single_outlier() {
                1
            } else {
                self.t
            },
            alphabet_size: nominal.alphabet_size(),
            beta: self.beta,
            n: self.sweep[0],
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda: self.lambda,
            k_max: self.k_max.unwrap_or(DEFAULT_K_MAX),
        };
        let cfg = ExperimentConfig {
            test,
            truth: GroundTruth {
                nominal,
                anomalous,
                outliers,
            },
            trials: self.trials,
            seed,
            sweep: self.sweep.to_vec(),
        };
        cfg.validate().map_err(|e| {
            let msg = e.to_string();
            loaded.error_at(blame(&msg), msg)
        })?;
        Ok(cfg)
    }
}

impl SimulateConfig {
    pub fn fields(&self) -> ExperimentFields<'_> {
        ExperimentFields {
            regime: self.regime,
            m: self.m,
            t: self.t,
            pn: &self.pn,
            pa: &self.pa,
            outliers: &self.outliers,
            trials: self.trials,
            sweep: &self.sweep,
            beta: self.beta,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda: self.lambda,
            k_max: self.k_max,
        }
    }
}

impl CompareConfig {
    /// Experiment for the sequential side of the Monte Carlo comparison.
    pub fn monte_carlo_experiment(&self) -> Option<ExperimentFields<'_>> {
        self.monte_carlo.as_ref().map(|mc| ExperimentFields {
            regime: self.sequential,
            m: self.m,
            t: self.t,
            pn: &self.pn,
            pa: &self.pa,
            outliers: &mc.outliers,
            trials: mc.trials,
            sweep: &mc.sweep,
            beta: None,
            lambda1: mc.lambda1,
            lambda2: mc.lambda2,
            lambda: None,
            k_max: mc.k_max,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIM: &str = r#"
regime = "est-exact-one"
m = 4
pn = [0.72, 0.28]
pa = [0.75, 0.25]
outliers = [1]
trials = 10
sweep = [50, 100]
"#;

    #[test]
    fn parses_minimal_simulation() {
        let loaded: Loaded<SimulateConfig> = parse(SIM, "sim.toml").unwrap();
        assert_eq!(loaded.value.t, 1);
        assert_eq!(loaded.value.regime, Regime::EstExactOne);
        let cfg = loaded.value.fields().build(&loaded, 7).unwrap();
        assert_eq!(cfg.truth.outliers, Subset::singleton(0));
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = format!("{SIM}colour = 3\n");
        let err = parse::<SimulateConfig>(&text, "sim.toml").err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("sim.toml:9"), "{msg}");
        assert!(msg.contains("colour"), "{msg}");
    }

    #[test]
    fn semantic_error_points_at_key() {
        let text = SIM.replace("[0.75, 0.25]", "[0.75, 0.2]");
        let loaded: Loaded<SimulateConfig> = parse(&text, "sim.toml").unwrap();
        let msg = loaded
            .value
            .fields()
            .build(&loaded, 1)
            .unwrap_err()
            .to_string();
        assert!(msg.starts_with("sim.toml:5: pa:"), "{msg}");
    }

    #[test]
    fn out_of_range_outlier_is_rejected() {
        let text = SIM.replace("outliers = [1]", "outliers = [5]");
        let loaded: Loaded<SimulateConfig> = parse(&text, "sim.toml").unwrap();
        let msg = loaded
            .value
            .fields()
            .build(&loaded, 1)
            .unwrap_err()
            .to_string();
        assert!(msg.contains(":6: outliers"), "{msg}");
    }

    #[test]
    fn distribution_flag_is_renormalised() {
        let d = parse_distribution("0.8, 0.2").unwrap();
        assert_eq!(d.alphabet_size(), 2);
        assert!(parse_distribution("0.8,0.3").is_err());
        assert!(parse_distribution("0.8,x").is_err());
    }

    #[test]
    fn line_of_ignores_prefix_matches() {
        let text = "lambda1 = 0.1\nlambda = 0.2\n[monte_carlo]\n";
        assert_eq!(line_of(text, "lambda"), Some(2));
        assert_eq!(line_of(text, "monte_carlo"), Some(3));
        assert_eq!(line_of(text, "beta"), None);
    }
}
