use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("run directory {path}: {message}")]
    RunDir { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] simmering::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_owned(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    pub fn run_dir(path: &Path, message: impl Into<String>) -> Self {
        CliError::RunDir {
            path: path.to_owned(),
            message: message.into(),
        }
    }

    /// Stable machine-readable category for the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::RunDir { .. } => "run_dir",
            CliError::Core(simmering::Error::Diverged { .. }) => "diverged",
            CliError::Core(_) => "core",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
        }
    }
}
