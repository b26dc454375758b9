//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (unknown generator, bad window ordering, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Caller violated an operation contract (length mismatch, bad range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A model parameter is NaN or infinite.
    #[error("corrupt model: {0}")]
    CorruptModel(String),

    /// Checkpoint container carries a version this build cannot read.
    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    /// Truncated or malformed file.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Paired test on a sample whose differences have zero spread.
    #[error("degenerate sample: all differences identical (mean difference {mean_diff})")]
    DegenerateSample { mean_diff: f64 },

    /// Wilcoxon input with every difference exactly zero.
    #[error("no information: all paired differences are zero")]
    NoInformation,

    /// Correlation requested on a constant input.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
