use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{source_name}:{line}:{column}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario `{scenario}`: {message}")]
    Validation { scenario: String, message: String },
    #[error("unknown preset `{0}` (see `rotqec list-presets`)")]
    UnknownPreset(String),
    #[error("simulation of `{scenario}` failed: {message}")]
    Solver { scenario: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    /// Process exit status: 1 for bad input, 2 for run failures, 3 for failed verification.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse { .. } | CliError::Validation { .. } | CliError::UnknownPreset(_) => 1,
            CliError::Solver { .. } | CliError::Io { .. } => 2,
            CliError::Verification(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
