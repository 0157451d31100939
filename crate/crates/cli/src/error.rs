//! Command-line errors and their exit codes.

use std::path::Path;

use taskrec_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, configuration or input content. Exit code 1.
    #[error("{0}")]
    Validation(String),
    /// Unreadable or unwritable files. Exit code 2.
    #[error("{0}")]
    Io(String),
    /// Failures that indicate a bug or a numerical breakdown. Exit code 3.
    #[error("{0}")]
    Internal(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    /// Prefixes the message with `context`, keeping the category.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{context}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{context}: {m}")),
            CliError::Internal(m) => CliError::Internal(format!("{context}: {m}")),
        }
    }
}

fn category(e: &CoreError) -> fn(String) -> CliError {
    match e {
        CoreError::Io(_) => CliError::Io,
        CoreError::NonFiniteLoss => CliError::Internal,
        CoreError::RunFailed { source, .. } => category(source),
        _ => CliError::Validation,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        category(&e)(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Attaches a file path to errors from reading or writing it.
pub trait WithPath<T> {
    fn at(self, path: &Path) -> CliResult<T>;
}

impl<T, E: Into<CliError>> WithPath<T> for std::result::Result<T, E> {
    fn at(self, path: &Path) -> CliResult<T> {
        self.map_err(|e| e.into().context(path.display()))
    }
}
