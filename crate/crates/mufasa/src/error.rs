//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape contract violated (matrix/vector dimensions disagree).
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Rank-one update would make the maintained inverse meaningless.
    #[error("near-singular rank-one update: denominator {denominator:e} below threshold")]
    NearSingularUpdate { denominator: f64 },

    /// Cholesky factorization failed; the matrix is not symmetric positive definite.
    #[error("matrix is not symmetric positive definite ({context})")]
    NotSpd { context: &'static str },

    /// A caller broke an API contract (double observe, missing sub-reward, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("config error: {0}")]
    Config(String),

    /// A requested mode is not supported by this operation.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// Gradient descent blew up; refuse to propagate non-finite values.
    #[error("training diverged: loss {loss:e} at step {step}")]
    Divergence { loss: f64, step: usize },

    /// Cartesian product of arm sets exceeds the enumeration cap.
    #[error("combination count {product} exceeds cap {cap}")]
    EnumerationCap { product: u128, cap: u128 },

    /// Text input (CSV, config file) failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
