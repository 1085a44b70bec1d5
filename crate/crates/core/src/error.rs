//! Error and diagnostic types shared across the pipeline.
//!
//! Fatal conditions are [`EtlError`] values; recoverable findings (skipped
//! rows, unknown kinds, unresolved labels) are [`Diagnostic`]s collected and
//! surfaced to the caller instead of aborting the run.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EtlError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("metadata error: {0}")]
    Metadata(String),

    #[error("dataset '{dataset}': {message}")]
    Dataset { dataset: String, message: String },

    #[error("dataset '{dataset}': ragged row {row}")]
    RaggedRow { dataset: String, row: usize },

    #[error("corrupt store at {root}: {reason}")]
    CorruptStore { root: PathBuf, reason: String },

    #[error("store error: {0}")]
    Store(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("report error: {0}")]
    Report(String),
}

impl EtlError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EtlError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code contract: 2 for user/config errors, 1 for internal
    /// or environment failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            EtlError::Manifest(_)
            | EtlError::Metadata(_)
            | EtlError::Dataset { .. }
            | EtlError::RaggedRow { .. } => 2,
            EtlError::Io { .. }
            | EtlError::CorruptStore { .. }
            | EtlError::Store(_)
            | EtlError::Integrity(_)
            | EtlError::Report(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

/// A non-fatal finding tied (when known) to a source row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
    pub row: Option<usize>,
}

impl Diagnostic {
    pub fn warning(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            message: message.into(),
            row: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            message: message.into(),
            row: None,
        }
    }

    pub fn at_row(mut self, row: usize) -> Self {
        self.row = Some(row);
        self
    }
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        match self.row {
            Some(row) => write!(f, "{tag} (row {row}): {}", self.message),
            None => write!(f, "{tag}: {}", self.message),
        }
    }
}
