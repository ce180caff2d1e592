use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] emspy_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Invalid plan; `field` is the dotted path of the offending entry.
    #[error("config {field}: {msg}")]
    Config { field: String, msg: String },

    #[error("{path}: {msg}")]
    Sidecar { path: PathBuf, msg: String },

    #[error("{path}: malformed document: {msg}")]
    Document { path: PathBuf, msg: String },

    #[error("incomplete run, missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),

    #[error("unknown {what} {value:?} (expected one of: {expected})")]
    Unknown {
        what: &'static str,
        value: String,
        expected: String,
    },
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn config<T>(field: impl Into<String>, msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Config {
        field: field.into(),
        msg: msg.into(),
    })
}
