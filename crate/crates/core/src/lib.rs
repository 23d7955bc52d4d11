//! Squared-Gaussian (CIR) short-rate model: Fredholm-operator bond pricing,
//! Wiener-chaos coefficients, exponential-quadratic Gaussian expectations and a
//! Monte Carlo reference engine.

// `!(x > 0.0)` guards are written that way so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod chaos;
pub mod error;
pub mod expquad;
pub mod model;
pub mod montecarlo;
pub mod operator;
pub mod pricing;
pub mod quad;
pub mod validation;

pub use error::{Error, Result};
