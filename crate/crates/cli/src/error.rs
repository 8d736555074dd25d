//! CLI error classification and the exit-code contract.
//!
//! Exit codes: 0 success, 1 validation error, 2 I/O error,
//! 3 external-predictor failure.

use maf_core::MafError;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Io(String),
    External(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
            CliError::External(_) => 3,
        }
    }

    /// Single-line machine-parsable rendering: `error[kind]: message`.
    pub fn render(&self) -> String {
        let (kind, msg) = match self {
            CliError::Validation(m) => ("validation", m),
            CliError::Io(m) => ("io", m),
            CliError::External(m) => ("external-predictor", m),
        };
        format!("error[{kind}]: {}", msg.replace('\n', " | "))
    }
}

impl From<MafError> for CliError {
    fn from(e: MafError) -> Self {
        match &e {
            MafError::Parameter(_)
            | MafError::Shape(_)
            | MafError::Degenerate(_)
            | MafError::Predictor { .. } => CliError::Validation(e.to_string()),
            MafError::Io { .. } | MafError::Format { .. } => CliError::Io(e.to_string()),
            MafError::External { .. } => CliError::External(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
