//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by volume operations, predictors, fusion and I/O.
#[derive(Debug, Error)]
pub enum MafError {
    /// A caller-supplied parameter is out of contract (bad angle, empty
    /// sample list, duplicate seeds, unknown predictor spec, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Grid shapes that must agree do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Input is structurally valid but carries no usable information
    /// (empty mask, zero-variance series, constant histogram, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A slice predictor failed while translating a slice set.
    #[error("predictor '{name}' failed on slice {index}: {reason}")]
    Predictor {
        name: String,
        index: usize,
        reason: String,
    },

    /// An external predictor process failed; `details` carries the child's
    /// diagnostic output.
    #[error("external predictor failed{}: {details}", match .status {
        Some(code) => format!(" (exit status {code})"),
        None => String::from(" (terminated by signal)"),
    })]
    External { status: Option<i32>, details: String },

    /// Filesystem error tagged with the offending path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents are not what the format requires.
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl MafError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MafError::Io {
            path: path.into(),
            source,
        }
    }

    /// Prefix a context label onto the message while keeping the variant,
    /// so callers can still classify the failure.
    pub fn context(self, ctx: &str) -> Self {
        match self {
            MafError::Parameter(m) => MafError::Parameter(format!("{ctx}: {m}")),
            MafError::Shape(m) => MafError::Shape(format!("{ctx}: {m}")),
            MafError::Degenerate(m) => MafError::Degenerate(format!("{ctx}: {m}")),
            MafError::Predictor {
                name,
                index,
                reason,
            } => MafError::Predictor {
                name,
                index,
                reason: format!("{ctx}: {reason}"),
            },
            MafError::External { status, details } => MafError::External {
                status,
                details: format!("{ctx}: {details}"),
            },
            e @ (MafError::Io { .. } | MafError::Format { .. }) => e,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        MafError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, MafError>;
