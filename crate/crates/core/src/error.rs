use thiserror::Error;

/// Errors raised by the library. Negative mathematical verdicts (a found
/// counterexample, a failed class check) are reported through result types,
/// not through this enum.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("function is not proper: {0}")]
    Improper(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("solver could not resolve the problem: {0}")]
    Unresolved(String),

    #[error("inner problem is unbounded below: {0}")]
    Unbounded(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("constraint qualification fails: {0}")]
    ConstraintQualification(String),

    #[error("not strongly representable: {0}")]
    NotStrong(String),

    #[error("invariant breached: {0}")]
    Breach(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
