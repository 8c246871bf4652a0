use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric range error: {0}")]
    NumericRange(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown location label `{0}`")]
    UnknownLabel(String),

    #[error("self-loop on location `{0}`")]
    SelfLoop(String),

    #[error("vertex `{0}` has no block assignment")]
    MissingBlock(String),

    #[error("linear solve failed in block {block}: {reason}")]
    Solver { block: usize, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (overflow, solver breakdown) as opposed
    /// to rejected input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericRange(_) | Error::Solver { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
