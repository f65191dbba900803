use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is rank deficient: column {column} has residual norm {norm:e}")]
    RankDeficient { column: usize, norm: f64 },

    #[error("{routine} did not converge after {iterations} iterations")]
    NoConvergence { routine: &'static str, iterations: usize },

    #[error("matrix is not symmetric: ||M - M^T||_F = {defect:e}")]
    Asymmetric { defect: f64 },

    #[error("invertibility is not guaranteed: {0}")]
    NotInvertible(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("contraction bound violated at n = {n}: {norm:e} > {bound:e}")]
    BoundViolation { n: usize, norm: f64, bound: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn mismatch(op: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::DimensionMismatch {
        op,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}
