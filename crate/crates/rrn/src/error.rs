use std::process::ExitCode;

/// Failure classes of the command-line tools; each maps to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or configuration (exit code 1).
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    /// Unreadable, corrupt or mismatched data and checkpoint files (exit code 2).
    #[error("{0}")]
    Format(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] rrn_core::Error),
    /// A check ran and did not pass (exit code 3).
    #[error("verification failed: {0}")]
    Verification(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) | CliError::Config(_) => ExitCode::from(1),
            CliError::Format(_) | CliError::Io { .. } | CliError::Model(_) => ExitCode::from(2),
            CliError::Verification(_) => ExitCode::from(3),
        }
    }
}
