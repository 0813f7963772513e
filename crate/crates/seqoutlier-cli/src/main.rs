//! `seqoutlier`: exponent tables, simulations and comparisons for outlier
//! hypothesis testing among parallel data streams.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use seqoutlier::detectors::Regime;

/// Failure classes, each with its own exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Check(String),
    #[error("{output}{:.2}% of trials hit the k_max cap", fraction * 100.0)]
    Truncated { fraction: f64, output: String },
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Check(_) => 3,
            CliError::Truncated { .. } => 4,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "seqoutlier",
    version,
    about = "Outlier hypothesis testing among parallel data streams"
)]
struct Cli {
    /// Worker threads for simulations; defaults to the available parallelism.
    #[arg(long, global = true, env = "SEQOUTLIER_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    Regime::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Regime::ALL.iter().map(|r| r.name()).collect();
        format!("unknown regime {s:?}; expected one of {}", names.join(", "))
    })
}

#[derive(Subcommand)]
enum Command {
    /// Print the error exponents of a regime.
    Exponent {
        #[arg(long, value_parser = parse_regime)]
        regime: Option<Regime>,
        /// Number of streams.
        #[arg(long = "M", visible_alias = "m")]
        m: Option<usize>,
        /// Outlier count (or upper bound) for the multi-outlier regimes.
        #[arg(long = "T", visible_alias = "t", default_value_t = 1)]
        t: usize,
        /// Nominal distribution, comma-separated.
        #[arg(long)]
        pn: Option<String>,
        /// Anomalous distribution, comma-separated.
        #[arg(long)]
        pa: Option<String>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        /// Threshold of the fixed-length at-most tests.
        #[arg(long)]
        lambda: Option<f64>,
        /// True outlier streams for the at-most regimes, 1-based.
        #[arg(long)]
        outliers: Option<String>,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Recompute the bundled reference values and report pass/fail.
        #[arg(long, alias = "check-paper")]
        check_reference: bool,
        /// Expectations file to check instead of the bundled one.
        #[arg(long)]
        expectations: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment from a TOML config.
    Simulate {
        config: PathBuf,
        /// Master seed.
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        trials: Option<u64>,
        /// Sample sizes, comma-separated.
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<u64>>,
        /// Output prefix; writes PREFIX.json and PREFIX.csv.
        #[arg(long, default_value = "simulation")]
        out: PathBuf,
    },
    /// Tabulate LD_B over every admissible outlier count.
    LdbCurve {
        #[arg(long = "M", visible_alias = "m")]
        m: usize,
        #[arg(long)]
        pn: String,
        #[arg(long)]
        pa: String,
        /// Write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compare a sequential and a fixed-length test.
    Compare {
        config: PathBuf,
        /// Master seed for the optional Monte Carlo part.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn workers(threads: Option<usize>) -> usize {
    threads.filter(|&n| n > 0).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn run(cli: Cli) -> Result<String, CliError> {
    let workers = workers(cli.threads);
    match cli.command {
        Command::Exponent {
            regime,
            m,
            t,
            pn,
            pa,
            lambda1,
            lambda2,
            lambda,
            outliers,
            json,
            check_reference,
            expectations,
        } => commands::exponent(commands::ExponentArgs {
            regime,
            m,
            t,
            pn,
            pa,
            lambda1,
            lambda2,
            lambda,
            outliers,
            json,
            check: check_reference,
            expectations,
        }),
        Command::Simulate {
            config,
            seed,
            trials,
            sweep,
            out,
        } => commands::simulate(commands::SimulateArgs {
            config,
            seed,
            trials,
            sweep,
            out,
            workers,
        }),
        Command::LdbCurve { m, pn, pa, csv } => commands::ldb_curve(m, &pn, &pa, csv.as_deref()),
        Command::Compare { config, seed, json } => commands::compare(commands::CompareArgs {
            config,
            seed,
            json,
            workers,
        }),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                CliError::Check(_) | CliError::Truncated { .. } => println!("{e}"),
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
