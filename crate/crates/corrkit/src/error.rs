//! CLI error taxonomy and process exit codes.

use std::path::PathBuf;
use std::process::ExitCode;

use corrkit_core::error::CoreError;

/// Exit codes: 1 usage, 2 config, 3 numeric divergence, 4 I/O.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation: unknown flags, missing arguments, invalid ids.
    #[error("{0}")]
    Usage(String),
    /// Config file problems and cross-file consistency failures
    /// (schema version, hash mismatches, malformed checkpoints).
    #[error("{0}")]
    Config(String),
    /// Non-finite numerics during training or inference.
    #[error("numeric divergence: {0}")]
    Divergence(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn exit_code(&self) -> ExitCode {
        let code = match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io { .. } => 4,
        };
        ExitCode::from(code)
    }
}

/// Core errors reaching the CLI are config problems unless the numerics
/// diverged: every other core error class means the run was configured
/// with values the library rejects.
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Divergence(msg) => CliError::Divergence(msg),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
