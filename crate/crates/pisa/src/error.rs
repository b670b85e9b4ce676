use std::path::{Path, PathBuf};

use pisa_core::Error as CoreError;

/// Failure classes of the command line tool, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } | CliError::Format { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.as_ref().to_path_buf();
        move |source| CliError::Io { path, source }
    }

    pub fn format(path: impl AsRef<Path>, detail: impl ToString) -> CliError {
        CliError::Format {
            path: path.as_ref().to_path_buf(),
            detail: detail.to_string(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::InvalidParameter { .. } | CoreError::LengthMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            CoreError::NonFinite(_)
            | CoreError::Diverged { .. }
            | CoreError::Degenerate(_)
            | CoreError::DegenerateSource { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
