use std::path::PathBuf;

use thiserror::Error;

/// Application errors, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("incompatible data: {0}")]
    Compat(String),
    #[error("{path}: line {line}: {message}")]
    Malformed { path: PathBuf, line: u64, message: String },
    #[error(transparent)]
    Core(#[from] utrack_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type AppResult<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn file(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        AppError::File { path: path.into(), message: message.to_string() }
    }

    /// 0 ok, 1 internal, 2 usage or config, 3 data or compatibility.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Config(_) | AppError::File { .. } | AppError::Malformed { .. } => 2,
            AppError::Core(utrack_core::Error::Config { .. }) | AppError::Core(utrack_core::Error::Argument(_)) => 2,
            AppError::Compat(_) => 3,
            AppError::Core(_) | AppError::Io(_) => 1,
        }
    }
}
