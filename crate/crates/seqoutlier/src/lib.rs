//! Outlier hypothesis testing among `M` parallel data streams over a finite
//! alphabet.
//!
//! The crate is organised bottom-up:
//!
//! * [`prob`]: distributions, empirical types, sampling and divergences.
//! * [`scoring`]: the grouping functionals, observation scores and thresholds.
//! * [`detectors`]: sequential and fixed-length tests producing a [`detectors::Verdict`].
//! * [`exponents`]: closed-form and optimisation-based error exponents.
//! * [`sim`]: a seeded, parallel Monte Carlo engine.
//! * [`reference`]: bundled reference exponent values and their evaluation.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detectors;
pub mod error;
pub mod exponents;
pub mod prob;
pub mod reference;
pub mod scoring;
pub mod sim;

pub use error::{Error, Result};
