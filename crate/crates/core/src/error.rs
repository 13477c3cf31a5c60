//! Error type shared across the crate.

use thiserror::Error;

/// Errors surfaced by the estimation pipeline.
///
/// The CLI maps these onto exit codes: configuration and input errors → 1,
/// numeric and training errors → 2, I/O errors → 3.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (shape mismatch, bad range).
    #[error("input error: {0}")]
    Input(String),

    /// A configuration file or option is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced non-finite values or failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training diverged; reports the offending step.
    #[error("training error at step {step}: {msg}")]
    Training { step: usize, msg: String },

    /// Filesystem failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
