use std::path::{Path, PathBuf};

use thiserror::Error;

/// Failure of a CLI command. Each variant maps to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(featsplat_core::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Numeric(_) | Self::Core(featsplat_core::Error::Numeric(_)) => EXIT_NUMERIC,
            _ => EXIT_VALIDATION,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, msg: impl Into<String>) -> Self {
        Self::Format { path: path.to_path_buf(), msg: msg.into() }
    }
}

impl From<featsplat_core::Error> for CliError {
    fn from(e: featsplat_core::Error) -> Self {
        match e {
            featsplat_core::Error::Numeric(m) => Self::Numeric(m),
            other => Self::Core(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
