//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad engine configuration or a missing component at run time.
    #[error("config: {0}")]
    Config(String),
    /// Input data that violates a documented precondition.
    #[error("validation: {0}")]
    Validation(String),
    /// An internal caller broke an API contract, e.g. mismatched dimensions.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A referenced document or term does not exist.
    #[error("lookup: {0}")]
    Lookup(String),
    /// The model adapter failed or returned something unusable.
    #[error("adapter: {0}")]
    Adapter(String),
    /// A mock scenario has no script for the request it received.
    #[error("scenario: {0}")]
    Scenario(String),
    /// Training diverged or was asked to run on unusable data.
    #[error("training: {0}")]
    Training(String),
    /// Trace and dataset files that do not line up during evaluation.
    #[error("evaluation: {0}")]
    Evaluation(String),
    /// A persisted file with a bad header, version or payload.
    #[error("format: {0}")]
    Format(String),
    /// The source error is carried separately so callers that walk the
    /// chain do not see the cause twice.
    #[error("io: {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an io error with the path that produced it.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
