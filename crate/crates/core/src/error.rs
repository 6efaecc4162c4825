use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no p-values")]
    Empty,

    #[error("p-value at index {index} is not in [0, 1]: {value}")]
    PValueOutOfRange { index: usize, value: String },

    #[error("threshold must lie in [0, 1], got {0}")]
    ThresholdOutOfRange(String),

    #[error("length mismatch: {what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid shape function: {0}")]
    InvalidShape(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("not a permutation of 0..{0}")]
    InvalidPermutation(usize),

    #[error("operation needs at least one true null hypothesis")]
    NoNulls,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
