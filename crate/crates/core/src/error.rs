//! Error type shared across the engine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("negative time: {0}")]
    NegativeTime(f64),

    #[error("more than {k_max} speakers intersect window {window_index}")]
    CapacityExceeded { window_index: usize, k_max: usize },

    #[error("segmentation shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("zero-norm vector passed to cosine distance")]
    DegenerateVector,

    #[error("weight column for channel {0} has no support")]
    EmptySupport(usize),

    #[error("slice for window {got} arrived after window {expected}")]
    OrderViolation { expected: usize, got: usize },

    #[error("RTTM parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("uri mismatch: reference '{reference}' vs hypothesis '{hypothesis}'")]
    UriMismatch {
        reference: String,
        hypothesis: String,
    },

    #[error("bad file format: {0}")]
    BadFormat(String),

    #[error("no segmentation stored for window {0}")]
    MissingWindow(usize),

    #[error("empty development set")]
    EmptyDevSet,

    #[error("provider failure at window {window_index}: {message}")]
    Provider {
        window_index: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
