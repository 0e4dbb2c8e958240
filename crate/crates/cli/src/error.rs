use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("scenario field `{field}`: {reason}")]
    Scenario { field: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] rhfs_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Evolution(String),

    #[error("sweep: {0}")]
    Sweep(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn field(field: impl Into<String>, reason: impl Into<String>) -> CliError {
    CliError::Scenario {
        field: field.into(),
        reason: reason.into(),
    }
}

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
