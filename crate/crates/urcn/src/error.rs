//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or operator shapes are inconsistent.
    #[error("shape error: {0}")]
    Shape(String),

    /// An argument is outside its valid domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// Iterative tuning (e.g. mask density bisection) failed to converge.
    #[error("tuning failure: {0}")]
    Tuning(String),

    /// Training diverged; the last finite checkpoint is preserved.
    #[error("training failure: {0}")]
    Training(String),

    /// Internal bookkeeping is inconsistent (e.g. missing gradient).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A checkpoint or dataset manifest does not match the requested run.
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 argument, 3 numerical, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::Argument(_)
            | Error::Consistency(_)
            | Error::ManifestMismatch(_) => 2,
            Error::Tuning(_) | Error::Training(_) => 3,
            Error::Io { .. } | Error::Format { .. } => 4,
        }
    }
}
