use std::path::PathBuf;

use thiserror::Error;
use vmat_core::Error as CoreError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONTRACT: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    /// Bad or conflicting options, caught before any work.
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 2 for contract and precondition failures, 3 for anything reading or writing files.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_CONTRACT,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                CoreError::Io { .. } | CoreError::Image { .. } | CoreError::Format(_) => EXIT_IO,
                _ => EXIT_CONTRACT,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
