//! Crate-wide error type. Every fallible operation reports through [`Error`]
//! so callers (including the CLI) get one consistent surface.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is outside its physical domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A spectral width of zero or below describes a non-physical spectrum.
    #[error("non-physical spectrum: {0}")]
    NonPhysicalSpectrum(String),

    /// Numerical integration failed to reach the requested accuracy.
    #[error("quadrature did not converge: residual error estimate {estimate:.3e}")]
    QuadratureNotConverged { estimate: f64 },

    /// A tag stream handed to the histogram engine was not time-ordered.
    #[error("tag stream is not sorted: channel {channel} index {index}")]
    UnsortedStream { channel: char, index: usize },

    /// An integration window reaches outside the histogram's covered lags.
    #[error("window [{lo}, {hi}] ticks exceeds histogram range ±{max_lag}")]
    WindowOutOfRange { lo: i64, hi: i64, max_lag: i64 },

    /// A tag file did not parse: bad magic, bad framing, or bad channel byte.
    #[error("malformed tag file: {0}")]
    TagFormat(String),

    /// A fringe scan held no usable extrema.
    #[error("no fringe detected: {0}")]
    NoFringe(String),

    /// Count arithmetic would divide by zero (empty extremum pair).
    #[error("degenerate extremum pair: max + min counts are zero")]
    EmptyExtremumPair,

    /// combine_scans was called with nothing to combine.
    #[error("no scan results to combine")]
    EmptyScanSet,

    /// A scenario file failed validation.
    #[error("scenario error: {0}")]
    Scenario(String),

    /// Malformed CSV artifact.
    #[error("malformed csv: {0}")]
    Csv(String),

    #[error("toml parse error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
