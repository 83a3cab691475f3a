use thiserror::Error;

use crate::io::FormatError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix must have at least one row and one column (got {rows}x{cols})")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("{0} did not converge")]
    NonConvergence(&'static str),

    #[error("expected a {expected} Gram matrix, got {actual}")]
    WrongGramVariant {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("too few examples: {what} requires at least {required}, got {actual}")]
    TooFewExamples {
        what: &'static str,
        required: usize,
        actual: usize,
    },

    /// Self-similarity of one representation is zero (or not positive), so
    /// the CKA normalization is undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Format(#[from] FormatError),
}
