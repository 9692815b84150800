use std::path::PathBuf;

/// Errors produced by the core library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("query {query_id}: {message}")]
    Validation { query_id: String, message: String },

    #[error("query {query_id}: reward {reward} outside declared range [{min}, {max}]")]
    RewardOutOfRange {
        query_id: String,
        reward: f64,
        min: f64,
        max: f64,
    },

    #[error("query {query_id}: missing required field `{field}`")]
    MissingField {
        query_id: String,
        field: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: String,
    },

    #[error("cannot normalize a vector with norm {norm:e}")]
    ZeroNorm { norm: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the underlying filesystem rather than of the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
