use std::path::Path;

use serde::Serialize;

/// Command failure, mapped onto the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Validation(_) => "validation",
            CliError::Io { .. } => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            code: i32,
            message: String,
        }
        let message = self.to_string().replace(['\n', '\r'], " ");
        serde_json::to_string(&Line { error: self.kind(), code: self.exit_code(), message }).expect("plain struct")
    }
}

impl From<densescan_core::Error> for CliError {
    fn from(e: densescan_core::Error) -> Self {
        use densescan_core::Error as E;
        match e {
            E::Config(_) => CliError::Config(e.to_string()),
            E::Decode(_) => CliError::Io { path: "<input>".into(), message: e.to_string() },
            _ => CliError::Validation(e.to_string()),
        }
    }
}
