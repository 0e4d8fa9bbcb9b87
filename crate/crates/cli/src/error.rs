use std::path::{Path, PathBuf};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const VERIFICATION_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] matinfo::Error),
    #[error("{0}")]
    Verification(String),
}

impl CliError {
    pub fn parse(path: &Path, message: impl ToString) -> Self {
        CliError::Parse {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } | CliError::Io { .. } => exit::USAGE,
            CliError::Data(matinfo::Error::InvalidConfig(_) | matinfo::Error::Checkpoint(_)) => {
                exit::USAGE
            }
            CliError::Data(_) => exit::DATA,
            CliError::Verification(_) => exit::VERIFICATION_FAILED,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
