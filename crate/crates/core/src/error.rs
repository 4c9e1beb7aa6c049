use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters supplied by the caller.
    Usage,
    /// Input data that cannot be used.
    Data,
    /// A numerical routine failed.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("record {index}: negative amount {amount}")]
    NegativeAmount { index: usize, amount: f64 },

    #[error("record {index}: expected {expected} attribute values, found {found}")]
    AttributeArity {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("empty block: the {0} set is empty")]
    EmptyBlock(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("timestamp {timestamp} precedes time origin {origin}")]
    BeforeOrigin { timestamp: i64, origin: i64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{count} malformed lines exceed the limit of {limit}")]
    TooManyMalformed { count: usize, limit: usize },

    #[error("no usable records")]
    NoUsableRecords,

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error(
        "maximum likelihood did not converge after {iterations} iterations \
         (shape {shape}, scale {scale}, gradient norm {gradient})"
    )]
    NonConvergence {
        iterations: usize,
        shape: f64,
        scale: f64,
        gradient: f64,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) => ErrorClass::Usage,
            Error::DegenerateFit(_) | Error::NonConvergence { .. } => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
