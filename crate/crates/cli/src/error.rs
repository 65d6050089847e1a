use std::io;
use std::path::Path;

use isib_core::Error as CoreError;

/// Every failure the CLI reports; [`CliError::exit_code`] maps it to the
/// process exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::NonFinite { .. }) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.display().to_string(), source }
    }

    pub fn format(path: &Path, message: impl ToString) -> CliError {
        CliError::Format { path: path.display().to_string(), message: message.to_string() }
    }
}
