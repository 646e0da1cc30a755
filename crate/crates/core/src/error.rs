use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size must be at least 1")]
    EmptyInput,

    #[error("invalid ground metric: {0}")]
    InvalidMetric(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("measure is not normalized (total mass {mass})")]
    NotNormalized { mass: f64 },

    #[error("total masses differ: {left} vs {right}")]
    MassMismatch { left: f64, right: f64 },

    #[error("measure has zero total mass")]
    ZeroMass,

    #[error("index {index} out of range for size {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The direct-domain scaling iteration produced zero or non-finite
    /// scalings. The log-domain solver handles these cases.
    #[error("kernel underflow after {iters} iterations; retry with the log-domain solver")]
    KernelUnderflow { iters: usize },

    #[error("scaling vector has a nonpositive entry at {index}")]
    NonPositiveScaling { index: usize },

    #[error("fixed-point iteration stalled at residual {residual:e} after {iters} iterations")]
    Diverged { iters: usize, residual: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("ground-truth tag set is empty")]
    EmptyTruth,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
