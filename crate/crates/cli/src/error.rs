use thiserror::Error;

/// Failures mapped onto the documented process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{failed} of {total} gradient checks failed")]
    GradcheckFailed { failed: usize, total: usize },

    /// Unreadable, malformed or invalid configuration, or bad arguments.
    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    /// An input artifact could not be read or decoded.
    #[error("corrupt input {path}: {message}")]
    Corrupt { path: String, message: String },

    #[error("mismatch: {0}")]
    Mismatch(String),

    /// Failure writing an output artifact.
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::GradcheckFailed { .. } => 1,
            CliError::Config(_) | CliError::Output { .. } => 2,
            CliError::Divergence(_) => 3,
            CliError::Corrupt { .. } => 4,
            CliError::Mismatch(_) => 5,
        }
    }

    pub fn corrupt(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Corrupt {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn output(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Output {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
