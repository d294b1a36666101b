use std::path::Path;

use thiserror::Error;

/// CLI failure, split by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed input or configuration: exit status 1.
    #[error("{0}")]
    Validation(String),
    /// The library refused the data on numerical grounds: exit status 2.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Validation(format!("{}: {e}", path.display()))
    }
}

/// Attach the offending input to a library error.
pub fn lib(context: &str) -> impl FnOnce(mtsls::Error) -> CliError + '_ {
    move |e| {
        let msg = format!("{context}: {e}");
        if e.is_numerical() {
            CliError::Numerical(msg)
        } else {
            CliError::Validation(msg)
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
