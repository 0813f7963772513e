//! Reference exponent values and the calculator calls that reproduce them.
//!
//! The values live in `data/expectations.toml`, exposed here as
//! [`EXPECTATIONS_TOML`]. Parsing is left to the caller so the library does
//! not depend on a TOML parser; any serde format works with [`Expectations`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponents::{
    bayes_fixed, bayes_seq, exp_fixed_lnv_t, exp_l_set, exp_ld, exp_omega_set, BayesScope,
    SimplexOptimizerSettings,
};
use crate::prob::{gjs, renyi, Distribution};
use crate::scoring::Subset;

/// Text of the bundled expectations file.
pub const EXPECTATIONS_TOML: &str = include_str!("../data/expectations.toml");

/// Format version understood by [`Expectations::validate`].
pub const EXPECTATIONS_VERSION: u32 = 1;

/// Which quantity a check evaluates, with its arguments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Quantity {
    Renyi {
        order: f64,
    },
    Gjs {
        alpha: f64,
    },
    Ld {
        m: usize,
        t: usize,
    },
    FixedLnv {
        m: usize,
        t: usize,
    },
    Omega {
        m: usize,
        t: usize,
        outliers: Subset,
        lambda: f64,
    },
    L {
        m: usize,
        t: usize,
        outliers: Subset,
        lambda: f64,
    },
    /// Maximising threshold of the fixed-length Bayesian exponent.
    BayesFixedLambda {
        m: usize,
        t: usize,
        outliers: Subset,
    },
    /// Sequential Bayesian exponent at the given second threshold.
    BayesSeq {
        m: usize,
        t: usize,
        outliers: Subset,
        lambda: f64,
    },
}

/// One reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub pn: Vec<f64>,
    pub pa: Vec<f64>,
    #[serde(flatten)]
    pub quantity: Quantity,
    pub expected: f64,
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
}

impl Check {
    /// Allowed absolute deviation from `expected`.
    pub fn tolerance(&self) -> f64 {
        self.abs_tol
            .unwrap_or(0.0)
            .max(self.rel_tol.unwrap_or(0.0) * self.expected.abs())
    }

    pub fn passes(&self, value: f64) -> bool {
        (value - self.expected).abs() <= self.tolerance()
    }

    /// Computes the quantity with the library calculators.
    pub fn evaluate(&self, settings: &SimplexOptimizerSettings) -> Result<f64> {
        let pn = Distribution::normalized(self.pn.clone(), 1e-9)?;
        let pa = Distribution::normalized(self.pa.clone(), 1e-9)?;
        let s = settings;
        Ok(match self.quantity {
            Quantity::Renyi { order } => renyi(&pn, &pa, order)?.value(),
            Quantity::Gjs { alpha } => gjs(&pn, &pa, alpha)?.value(),
            Quantity::Ld { m, t } => exp_ld(&pn, &pa, m, t)?.value.value(),
            Quantity::FixedLnv { m, t } => exp_fixed_lnv_t(&pn, &pa, m, t, s)?.value,
            Quantity::Omega {
                m,
                t,
                outliers,
                lambda,
            } => exp_omega_set(lambda, &pn, &pa, m, outliers, t, s)?.value,
            Quantity::L {
                m,
                t,
                outliers,
                lambda,
            } => exp_l_set(lambda, &pn, &pa, m, outliers, t, s)?.value,
            Quantity::BayesFixedLambda { m, t, outliers } => {
                bayes_fixed(&pn, &pa, m, t, BayesScope::Candidate(outliers), s)?.lambda_star
            }
            Quantity::BayesSeq {
                m,
                t,
                outliers,
                lambda,
            } => bayes_seq(&pn, &pa, m, t, BayesScope::Candidate(outliers), lambda, s)?.value,
        })
    }
}

/// Contents of an expectations file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub version: u32,
    #[serde(rename = "check")]
    pub checks: Vec<Check>,
}

impl Expectations {
    pub fn validate(&self) -> Result<()> {
        if self.version != EXPECTATIONS_VERSION {
            return Err(Error::InvalidConfig(format!(
                "expectations version {} is not supported (expected {EXPECTATIONS_VERSION})",
                self.version
            )));
        }
        for c in &self.checks {
            if c.abs_tol.is_none() && c.rel_tol.is_none() {
                return Err(Error::InvalidConfig(format!(
                    "check {} has no tolerance",
                    c.id
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }
}
