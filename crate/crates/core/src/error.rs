//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("4ab/c^2 = {value} is not an integer >= 2")]
    NonIntegerDimension { value: f64 },

    #[error("time order violated: s = {s} > t = {t}")]
    InvalidTimeOrder { s: f64, t: f64 },

    #[error("time {value} outside [{lower}, {upper}]")]
    OutOfDomain { value: f64, lower: f64, upper: f64 },

    #[error("kernel is not symmetric (max deviation {deviation:e})")]
    AsymmetricKernel { deviation: f64 },

    #[error("1 + mu*lambda = {value:e} <= 0 (mu = {mu})")]
    NonPositiveSpectrum { mu: f64, value: f64 },

    #[error("perfect matchings need an even number of points, got {points}")]
    OddPointCount { points: usize },

    #[error("{points} marked points exceeds the enumeration cap of {cap}")]
    TooManyPoints { points: usize, cap: usize },

    #[error("Hermite order {order} exceeds the supported maximum {max}")]
    OrderTooHigh { order: usize, max: usize },

    #[error("chaos coefficients are only available for r0 = 0, got {r0}")]
    NonZeroInitialRate { r0: f64 },

    #[error("mode {index} has c = {c} <= -1")]
    ModeOutOfRange { index: usize, c: f64 },

    #[error("an estimate needs at least 2 samples, got {n}")]
    InsufficientSamples { n: usize },

    #[error("operator pricing requires lambda_bar = 0, got {lambda_bar}")]
    MarketPriceUnsupported { lambda_bar: f64 },

    #[error("quadrature failed to reach tolerance (estimated error {error:e})")]
    QuadratureNotConverged { error: f64 },
}

impl Error {
    /// Stable identifier used in structured diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "InvalidParameter",
            Error::NonIntegerDimension { .. } => "NonIntegerDimension",
            Error::InvalidTimeOrder { .. } => "InvalidTimeOrder",
            Error::OutOfDomain { .. } => "OutOfDomain",
            Error::AsymmetricKernel { .. } => "AsymmetricKernel",
            Error::NonPositiveSpectrum { .. } => "NonPositiveSpectrum",
            Error::OddPointCount { .. } => "OddPointCount",
            Error::TooManyPoints { .. } => "TooManyPoints",
            Error::OrderTooHigh { .. } => "OrderTooHigh",
            Error::NonZeroInitialRate { .. } => "NonZeroInitialRate",
            Error::ModeOutOfRange { .. } => "ModeOutOfRange",
            Error::InsufficientSamples { .. } => "InsufficientSamples",
            Error::MarketPriceUnsupported { .. } => "MarketPriceUnsupported",
            Error::QuadratureNotConverged { .. } => "QuadratureNotConverged",
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
