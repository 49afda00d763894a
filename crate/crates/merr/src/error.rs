//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty bag: a bag must contain at least one point")]
    EmptyBag,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("inconsistent embedding geometry: squared distance {value} below tolerance")]
    InconsistentGeometry { value: f64 },

    #[error("zero bandwidth: all sampled point pairs coincide")]
    ZeroBandwidth,

    #[error("label {index} has norm {norm} exceeding declared bound {bound}")]
    LabelBound { index: usize, norm: f64, bound: f64 },

    #[error("singular system: factorization failed after jitter escalation up to {max_jitter}")]
    SingularSystem { max_jitter: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite { context: context.into() }
    }
}
