//! The four subcommands.

use std::path::{Path, PathBuf};

use seqoutlier::detectors::Regime;
use seqoutlier::exponents::{
    bayes_fixed, bayes_seq, exp_ld, exponent_report, BayesScope, ExponentParams,
    SimplexOptimizerSettings,
};
use seqoutlier::prob::Distribution;
use seqoutlier::reference::{Expectations, EXPECTATIONS_TOML};
use seqoutlier::scoring::max_outliers;
use seqoutlier::sim::{compare_tests, run_experiment};

use crate::config::{self, CompareConfig, SimulateConfig};
use crate::output::{
    self, fmt4, table, ComparisonDocument, ExponentDocument, LdRow, SimulationDocument,
    TheoryComparison, SCHEMA_VERSION,
};
use crate::CliError;

/// Fraction of truncated trials above which a run is flagged.
pub const TRUNCATION_LIMIT: f64 = 0.01;

pub struct ExponentArgs {
    pub regime: Option<Regime>,
    pub m: Option<usize>,
    pub t: usize,
    pub pn: Option<String>,
    pub pa: Option<String>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub lambda: Option<f64>,
    pub outliers: Option<String>,
    pub json: Option<PathBuf>,
    pub check: bool,
    pub expectations: Option<PathBuf>,
}

fn distribution_flag(name: &str, value: &Option<String>) -> Result<Distribution, CliError> {
    let text = value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("--{name} is required")))?;
    config::parse_distribution(text).map_err(|e| CliError::Config(format!("--{name}: {e}")))
}

fn library(e: seqoutlier::Error) -> CliError {
    use seqoutlier::Error as E;
    match e {
        E::Infeasible | E::ResourceGuard(_) => CliError::Runtime(e.to_string()),
        _ => CliError::Config(e.to_string()),
    }
}

pub fn exponent(args: ExponentArgs) -> Result<String, CliError> {
    if args.check {
        let given = [
            ("--regime", args.regime.is_some()),
            ("--M", args.m.is_some()),
            ("--pn", args.pn.is_some()),
            ("--pa", args.pa.is_some()),
            ("--json", args.json.is_some()),
        ];
        if let Some((flag, _)) = given.iter().find(|(_, set)| *set) {
            return Err(CliError::Config(format!(
                "{flag} cannot be combined with --check-reference"
            )));
        }
        return check_reference(args.expectations.as_deref());
    }
    if args.expectations.is_some() {
        return Err(CliError::Config(
            "--expectations needs --check-reference".into(),
        ));
    }
    let regime = args
        .regime
        .ok_or_else(|| CliError::Config("--regime is required".into()))?;
    let m = args
        .m
        .ok_or_else(|| CliError::Config("--M is required".into()))?;
    let pn = distribution_flag("pn", &args.pn)?;
    let pa = distribution_flag("pa", &args.pa)?;
    let at_most_seq = matches!(regime, Regime::EstAtmostOne | Regime::EstAtmostT);
    let at_most_fixed = matches!(regime, Regime::FixZwhOne | Regime::FixZwhT);
    let unused = [
        ("--lambda1", args.lambda1.is_some() && !at_most_seq),
        ("--lambda2", args.lambda2.is_some() && !at_most_seq),
        ("--lambda", args.lambda.is_some() && !at_most_fixed),
        (
            "--outliers",
            args.outliers.is_some() && !(at_most_seq || at_most_fixed),
        ),
        ("--T", args.t != 1 && regime.single_outlier()),
    ];
    if let Some((flag, _)) = unused.iter().find(|(_, bad)| *bad) {
        return Err(CliError::Config(format!(
            "{flag} does not apply to regime {regime}"
        )));
    }
    let outliers = match &args.outliers {
        Some(text) => {
            let idx = config::parse_outliers(text)
                .map_err(|e| CliError::Config(format!("--outliers: {e}")))?;
            Some(
                config::subset(&idx, m)
                    .map_err(|e| CliError::Config(format!("--outliers: {e}")))?,
            )
        }
        None => None,
    };
    let params = ExponentParams {
        lambda1: args.lambda1,
        lambda2: args.lambda2,
        lambda: args.lambda,
        outliers,
    };
    let settings = SimplexOptimizerSettings::default();
    let report =
        exponent_report(regime, &pn, &pa, m, args.t, &params, &settings).map_err(library)?;
    if let Some(path) = &args.json {
        let doc = ExponentDocument {
            schema_version: SCHEMA_VERSION.into(),
            pn: pn.probs().to_vec(),
            pa: pa.probs().to_vec(),
            report: report.clone(),
        };
        output::write_json(path, &doc)?;
    }
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .map(|e| {
            vec![
                e.name.clone(),
                fmt4(e.value.value()),
                e.argument.clone().unwrap_or_default(),
            ]
        })
        .collect();
    Ok(format!(
        "regime {} M={} T={}\n{}",
        report.regime,
        report.m,
        report.t,
        table(&["exponent", "value", "argument"], &rows)
    ))
}

fn check_reference(path: Option<&Path>) -> Result<String, CliError> {
    let (text, shown) = match path {
        Some(p) => (
            std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            p.display().to_string(),
        ),
        None => (
            EXPECTATIONS_TOML.to_string(),
            "bundled expectations".to_string(),
        ),
    };
    let expectations: Expectations = config::parse(&text, &shown).map(|l| l.value)?;
    expectations
        .validate()
        .map_err(|e| CliError::Config(format!("{shown}: {e}")))?;
    let settings = SimplexOptimizerSettings::default();
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for c in &expectations.checks {
        let (computed, verdict) = match c.evaluate(&settings) {
            Ok(v) if c.passes(v) => (fmt4(v), "PASS"),
            Ok(v) => (fmt4(v), "FAIL"),
            Err(e) => (format!("error: {e}"), "FAIL"),
        };
        if verdict == "FAIL" {
            failed.push(c.id.clone());
        }
        rows.push(vec![
            c.id.clone(),
            fmt4(c.expected),
            computed,
            fmt4(c.tolerance()),
            verdict.into(),
        ]);
    }
    let out = table(
        &["check", "expected", "computed", "tolerance", "result"],
        &rows,
    );
    if failed.is_empty() {
        Ok(out)
    } else {
        Err(CliError::Check(format!(
            "{out}{} of {} checks failed: {}",
            failed.len(),
            rows.len(),
            failed.join(", ")
        )))
    }
}

pub struct SimulateArgs {
    pub config: PathBuf,
    pub seed: u64,
    pub trials: Option<u64>,
    pub sweep: Option<Vec<u64>>,
    pub out: PathBuf,
    pub workers: usize,
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

pub fn simulate(args: SimulateArgs) -> Result<String, CliError> {
    let mut loaded = config::load::<SimulateConfig>(&args.config)?;
    if let Some(trials) = args.trials {
        loaded.value.trials = trials;
    }
    if let Some(sweep) = args.sweep {
        loaded.value.sweep = sweep;
    }
    let cfg = loaded.value.fields().build(&loaded, args.seed)?;
    let report = run_experiment(&cfg, args.workers).map_err(library)?;
    let json_path = with_extension(&args.out, "json");
    let csv_path = with_extension(&args.out, "csv");
    let doc = SimulationDocument {
        schema_version: SCHEMA_VERSION.into(),
        config: loaded.value.clone(),
        report: report.clone(),
    };
    output::write_json(&json_path, &doc)?;
    output::write_text(&csv_path, &output::simulation_csv(&report)?)?;

    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                p.hypothesis.clone(),
                p.trials.to_string(),
                p.counts.summary(),
                fmt4(p.error_prob),
                fmt4(p.wilson_hi),
                fmt4(p.mean_tau),
                fmt4(p.exponent_estimate)
                    + if p.exponent_is_lower_bound {
                        " (>=)"
                    } else {
                        ""
                    },
            ]
        })
        .collect();
    let theory = report
        .theory_exponent
        .map(fmt4)
        .unwrap_or_else(|| "unavailable".into());
    let out = format!(
        "regime {} M={} T={} seed={} theory exponent {theory}\n{}wrote {} and {}\n",
        report.regime,
        report.m,
        report.t,
        report.seed,
        table(
            &[
                "n",
                "hypothesis",
                "trials",
                "errors",
                "error_prob",
                "wilson_hi",
                "mean_tau",
                "exponent"
            ],
            &rows
        ),
        json_path.display(),
        csv_path.display()
    );
    let fraction = report.truncated_fraction();
    if fraction > TRUNCATION_LIMIT {
        return Err(CliError::Truncated {
            fraction,
            output: out,
        });
    }
    Ok(out)
}

pub fn ldb_curve(m: usize, pn: &str, pa: &str, csv: Option<&Path>) -> Result<String, CliError> {
    let pn = config::parse_distribution(pn).map_err(|e| CliError::Config(format!("--pn: {e}")))?;
    let pa = config::parse_distribution(pa).map_err(|e| CliError::Config(format!("--pa: {e}")))?;
    let rows = ld_rows(&pn, &pa, m)?;
    if let Some(path) = csv {
        output::write_text(path, &output::ld_csv(&rows)?)?;
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.t.to_string(), fmt4(r.ld_b), r.argmin_t.to_string()])
        .collect();
    Ok(table(&["T", "LD_B", "argmin t"], &cells))
}

/// `LD_B` for every admissible outlier count.
pub fn ld_rows(pn: &Distribution, pa: &Distribution, m: usize) -> Result<Vec<LdRow>, CliError> {
    if m < 3 {
        return Err(CliError::Config(format!("--M = {m} must be at least 3")));
    }
    (1..=max_outliers(m))
        .map(|t| {
            let ld = exp_ld(pn, pa, m, t).map_err(library)?;
            Ok(LdRow {
                t,
                ld_b: ld.value.value(),
                argmin_t: ld.argmin_t,
            })
        })
        .collect()
}

pub struct CompareArgs {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub json: Option<PathBuf>,
    pub workers: usize,
}

fn theory(
    cfg: &CompareConfig,
    loaded: &config::Loaded<CompareConfig>,
) -> Result<TheoryComparison, CliError> {
    let pn = Distribution::normalized(cfg.pn.clone(), config::MASS_TOLERANCE)
        .map_err(|e| loaded.error_at("pn", e))?;
    let pa = Distribution::normalized(cfg.pa.clone(), config::MASS_TOLERANCE)
        .map_err(|e| loaded.error_at("pa", e))?;
    if cfg.sequential.is_fixed_length() {
        return Err(loaded.error_at(
            "sequential",
            format!("{} is not a sequential regime", cfg.sequential),
        ));
    }
    if !cfg.fixed.is_fixed_length() {
        return Err(loaded.error_at(
            "fixed",
            format!("{} is not a fixed-length regime", cfg.fixed),
        ));
    }
    if cfg.sequential.allows_null() != cfg.fixed.allows_null() {
        return Err(loaded.error_at(
            "fixed",
            "both regimes must agree on whether the null hypothesis is admissible",
        ));
    }
    let t = if cfg.sequential.single_outlier() {
        1
    } else {
        cfg.t
    };
    let settings = SimplexOptimizerSettings::default();
    let at = |key: &'static str| move |e: seqoutlier::Error| loaded.error_at(key, e);
    if cfg.sequential.allows_null() {
        let scope = match &cfg.outliers {
            Some(idx) => BayesScope::Candidate(
                config::subset(idx, cfg.m).map_err(|e| loaded.error_at("outliers", e))?,
            ),
            None => BayesScope::AllCandidates,
        };
        let lambda2 = cfg
            .lambda2
            .ok_or_else(|| loaded.error_at("lambda2", "required for at-most regimes"))?;
        let seq =
            bayes_seq(&pn, &pa, cfg.m, t, scope, lambda2, &settings).map_err(at("lambda2"))?;
        let fixed = bayes_fixed(&pn, &pa, cfg.m, t, scope, &settings).map_err(at("m"))?;
        Ok(TheoryComparison {
            kind: "bayes".into(),
            sequential: seq.value,
            fixed: fixed.value,
            sequential_thresholds: vec![
                ("lambda1_sup".into(), seq.lambda1),
                ("lambda2".into(), seq.lambda2),
            ],
            fixed_thresholds: vec![("lambda_star".into(), fixed.lambda_star)],
        })
    } else {
        if cfg.lambda2.is_some() {
            return Err(loaded.error_at("lambda2", "only applies to at-most regimes"));
        }
        let params = ExponentParams::default();
        let seq = exponent_report(cfg.sequential, &pn, &pa, cfg.m, t, &params, &settings)
            .map_err(at("m"))?;
        let fixed =
            exponent_report(cfg.fixed, &pn, &pa, cfg.m, t, &params, &settings).map_err(at("m"))?;
        let mis = |r: &seqoutlier::exponents::ExponentReport| {
            r.get("misclassification").map(|d| d.value()).unwrap_or(0.0)
        };
        Ok(TheoryComparison {
            kind: "misclassification".into(),
            sequential: mis(&seq),
            fixed: mis(&fixed),
            sequential_thresholds: Vec::new(),
            fixed_thresholds: Vec::new(),
        })
    }
}

pub fn compare(args: CompareArgs) -> Result<String, CliError> {
    let loaded = config::load::<CompareConfig>(&args.config)?;
    let cfg = &loaded.value;
    let theory = theory(cfg, &loaded)?;
    let mut rows = Vec::new();
    if let Some(fields) = cfg.monte_carlo_experiment() {
        let seed = args.seed.ok_or_else(|| {
            CliError::Config("--seed is required when the config has a [monte_carlo] table".into())
        })?;
        let experiment = fields.build(&loaded, seed)?;
        let lambda = cfg.monte_carlo.as_ref().and_then(|mc| mc.lambda);
        rows = compare_tests(&experiment, cfg.fixed, lambda, args.workers).map_err(library)?;
    } else if args.seed.is_some() {
        return Err(CliError::Config(
            "--seed needs a [monte_carlo] table in the config".into(),
        ));
    }
    if let Some(path) = &args.json {
        let doc = ComparisonDocument {
            schema_version: SCHEMA_VERSION.into(),
            config: cfg.clone(),
            seed: args.seed,
            theory: theory.clone(),
            monte_carlo: rows.clone(),
        };
        output::write_json(path, &doc)?;
    }
    let thresholds = |v: &[(String, f64)]| {
        v.iter()
            .map(|(k, x)| format!("{k}={}", fmt4(*x)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = format!("{} exponent\n", theory.kind);
    out += &table(
        &["test", "regime", "exponent", "thresholds"],
        &[
            vec![
                "sequential".into(),
                cfg.sequential.to_string(),
                fmt4(theory.sequential),
                thresholds(&theory.sequential_thresholds),
            ],
            vec![
                "fixed".into(),
                cfg.fixed.to_string(),
                fmt4(theory.fixed),
                thresholds(&theory.fixed_thresholds),
            ],
        ],
    );
    if !rows.is_empty() {
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.sequential.n.to_string(),
                    fmt4(r.sequential.mean_tau),
                    fmt4(r.sequential.error_prob),
                    r.fixed_n.to_string(),
                    fmt4(r.fixed.error_prob),
                ]
            })
            .collect();
        out += "\nmonte carlo at matched sample size\n";
        out += &table(
            &[
                "n",
                "seq mean_tau",
                "seq error_prob",
                "fixed n",
                "fixed error_prob",
            ],
            &cells,
        );
    }
    Ok(out)
}
