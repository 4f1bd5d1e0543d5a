use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes: 0 success, 1 user error, 2 internal error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    UserError = 1,
    InternalError = 2,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: format error at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Simulation(#[from] cavion::Error),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Internal(#[from] anyhow::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// User mistakes exit 1, environment/internal failures exit 2.
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Config(_)
            | CliError::Format { .. }
            | CliError::Usage(_)
            | CliError::Simulation(_)
            | CliError::Verification(_) => ExitCode::UserError,
            CliError::Io { .. } | CliError::Internal(_) => ExitCode::InternalError,
        }
    }
}
