use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure reported by a token-distribution provider.
#[derive(Debug, Clone, Error)]
#[error("provider error{}: {message}", if *.retryable { " (retryable)" } else { "" })]
pub struct ProviderError {
    pub message: String,
    /// Transport failures are retryable; protocol violations are not.
    pub retryable: bool,
}

impl ProviderError {
    pub fn transport(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: true }
    }

    pub fn protocol(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: false }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed label path {path:?}: {reason}")]
    LabelPath { path: String, reason: String },

    #[error("unknown label {0}")]
    UnknownLabel(String),

    #[error("duplicate label {0}")]
    DuplicateLabel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{path}:{line}: {reason}")]
    Data { path: String, line: usize, reason: String },

    #[error("insufficient examples for label {label}: have {have}, need {need}")]
    InsufficientExamples { label: String, have: usize, need: usize },

    #[error(transparent)]
    Provider(#[from] ProviderError),

    #[error("provider failed mid-run ({source}); resumable state written to {checkpoint}")]
    Interrupted { source: ProviderError, checkpoint: PathBuf },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}
