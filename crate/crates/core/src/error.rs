use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
///
/// `Config` and `Validation` map to exit code 1 in the CLI,
/// `TrainingHealth` to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("path error: {path}: {reason}")]
    Path { path: PathBuf, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training health error at step {step}: {detail}")]
    TrainingHealth { step: u64, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn path(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Path {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// CLI exit code for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::TrainingHealth { .. } => 2,
            _ => 1,
        }
    }
}
