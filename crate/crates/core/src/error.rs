use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid depth {0} (must be > 0)")]
    InvalidDepth(f64),
    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("registration failed: {0}")]
    RegistrationFailed(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("retrieval index is empty")]
    EmptyIndex,
    #[error("key pose is not in free space")]
    InvalidKeyPose,
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("format error in {}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
