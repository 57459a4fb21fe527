//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AoilError>;

#[derive(Debug, Error)]
pub enum AoilError {
    /// Shapes disagree: matrix/vector dimensions, tensor vs. optimizer
    /// state, stream feature arity, and the like.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An API was called in a state its contract forbids, for example
    /// applying a drift reset without a stored snapshot.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A run or generator configuration that cannot be executed.
    #[error("invalid config: {0}")]
    Config(String),

    /// Malformed stream data; `row` is the 1-based line number in the file.
    #[error("bad data at row {row}: {message}")]
    Data { row: usize, message: String },

    /// Malformed or incompatible checkpoint file.
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    /// A metric that is undefined for the given inputs, such as AUC over a
    /// score store that only saw one class.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl AoilError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        AoilError::Io { path: path.into(), source }
    }
}
