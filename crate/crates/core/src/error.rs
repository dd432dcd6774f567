use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("zero vector at row {0} cannot be normalized")]
    ZeroVector(usize),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("label index {index} out of range for {count} rows")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("duplicate label index {0}")]
    DuplicateIndex(usize),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("conception loss undefined with a single conception")]
    SingleConception,

    #[error("conception {0} has no members in the batch")]
    EmptyConception(usize),

    #[error("conception id {id} out of range (K = {k})")]
    ConceptionOutOfRange { id: usize, k: usize },

    #[error("requested {requested} conceptions but only {available} exist")]
    TooFewConceptions { requested: usize, available: usize },

    #[error("forward cache is stale (cache version {cache}, params version {params})")]
    StaleCache { cache: u64, params: u64 },

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}")]
    NonFiniteLoss { epoch: usize, iteration: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
