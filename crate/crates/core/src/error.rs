//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file or directory does not follow the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// Stored data contradicts its own sidecar/invariants.
    #[error("corrupt input: {0}")]
    CorruptInput(String),

    /// I/O failure, annotated with the offending path.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An operation was called outside its contract (shape mismatch etc.).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value or combination.
    #[error("configuration error: {0}")]
    Config(String),

    /// A detector could not produce a result on this frame.
    #[error("detection failed: {0}")]
    Detection(String),

    /// Generator parameters describe impossible geometry.
    #[error("infeasible parameters: {0}")]
    Params(String),

    /// Training aborted (non-finite loss/gradients, degenerate data).
    #[error("training failed: {0}")]
    Training(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
