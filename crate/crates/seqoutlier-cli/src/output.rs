//! Report files and terminal tables.
//!
//! Flat tables are UTF-8 CSV with a header row and LF endings. Structured
//! reports are pretty-printed JSON with a top-level `schema_version`.
//! Numbers are written at full precision in files and at 4 decimals on the
//! terminal.

use std::path::Path;

use serde::{Deserialize, Serialize};

use seqoutlier::exponents::ExponentReport;
use seqoutlier::sim::{ComparisonRow, SimulationReport};

use crate::config::{CompareConfig, SimulateConfig};
use crate::CliError;

pub const SCHEMA_VERSION: &str = "1";

/// Columns of the simulation table.
pub const SIMULATION_COLUMNS: [&str; 10] = [
    "n",
    "hypothesis",
    "trials",
    "errors_by_class",
    "error_prob",
    "wilson_hi",
    "mean_tau",
    "tau_se",
    "exponent_estimate",
    "theory_exponent",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentDocument {
    pub schema_version: String,
    pub pn: Vec<f64>,
    pub pa: Vec<f64>,
    pub report: ExponentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationDocument {
    pub schema_version: String,
    pub config: SimulateConfig,
    pub report: SimulationReport,
}

/// One row of `ldb-curve`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdRow {
    pub t: usize,
    pub ld_b: f64,
    pub argmin_t: usize,
}

/// Theory side of a comparison: one exponent per test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryComparison {
    /// `bayes` for at-most regimes, `misclassification` otherwise.
    pub kind: String,
    pub sequential: f64,
    pub fixed: f64,
    /// Thresholds at which the values are attained, by name.
    pub sequential_thresholds: Vec<(String, f64)>,
    pub fixed_thresholds: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonDocument {
    pub schema_version: String,
    pub config: CompareConfig,
    pub seed: Option<u64>,
    pub theory: TheoryComparison,
    pub monte_carlo: Vec<ComparisonRow>,
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, doc: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| io_error(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn optional(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Simulation table as CSV text.
pub fn simulation_csv(report: &SimulationReport) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(SIMULATION_COLUMNS).map_err(fail)?;
    let theory = optional(report.theory_exponent);
    for p in &report.points {
        w.write_record([
            p.n.to_string(),
            p.hypothesis.clone(),
            p.trials.to_string(),
            p.counts.summary(),
            p.error_prob.to_string(),
            p.wilson_hi.to_string(),
            p.mean_tau.to_string(),
            p.tau_se.to_string(),
            p.exponent_estimate.to_string(),
            theory.clone(),
        ])
        .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

/// `ldb-curve` table as CSV text.
pub fn ld_csv(rows: &[LdRow]) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["T", "ld_b", "argmin_t"]).map_err(fail)?;
    for r in rows {
        w.write_record([r.t.to_string(), r.ld_b.to_string(), r.argmin_t.to_string()])
            .map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Magnitudes below this print as zero; they are rounding residue.
const DISPLAY_ZERO: f64 = 1e-12;

/// Fixed 4-decimal rendering; values under 1e-3 switch to scientific so
/// small exponents keep four significant digits.
pub fn fmt4(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else if v.abs() < DISPLAY_ZERO {
        format!("{:.4}", 0.0)
    } else if v.abs() < 1e-3 {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

/// Left-aligned plain-text table.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> T {
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
    }

    #[test]
    fn fmt4_rounds_and_switches_for_tiny_values() {
        assert_eq!(fmt4(0.049276), "0.0493");
        assert_eq!(fmt4(0.0), "0.0000");
        assert_eq!(fmt4(f64::INFINITY), "inf");
        assert_eq!(fmt4(3.71e-4), "3.7100e-4");
        assert_eq!(fmt4(4.4e-16), "0.0000");
    }

    #[test]
    fn table_pads_columns() {
        let t = table(&["a", "bb"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "a    bb\nxyz  1\n");
    }

    #[test]
    fn ld_csv_has_header_and_lf_endings() {
        let text = ld_csv(&[LdRow {
            t: 1,
            ld_b: 0.5,
            argmin_t: 0,
        }])
        .unwrap();
        assert_eq!(text, "T,ld_b,argmin_t\n1,0.5,0\n");
    }

    #[test]
    fn simulation_document_round_trips() {
        use seqoutlier::sim::run_experiment;

        let text = "regime = \"est-atmost-one\"\nm = 4\npn = [0.7, 0.3]\npa = [0.9, 0.1]\noutliers = [2]\n\
                    trials = 40\nsweep = [30, 60]\nlambda1 = 0.04\nlambda2 = 0.02\n";
        let loaded = crate::config::parse::<SimulateConfig>(text, "mem").unwrap();
        let cfg = loaded.value.fields().build(&loaded, 3).unwrap();
        let doc = SimulationDocument {
            schema_version: SCHEMA_VERSION.into(),
            config: loaded.value.clone(),
            report: run_experiment(&cfg, 2).unwrap(),
        };
        let dir = std::env::temp_dir().join(format!("seqoutlier-rt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("doc.json");
        write_json(&path, &doc).unwrap();
        let back: SimulationDocument = read_json(&path);
        std::fs::remove_dir_all(&dir).unwrap();
        assert_eq!(back, doc);
    }
}
