//! Configuration, logging and studies for the `trqda` command-line runner.

pub mod config;
pub mod io;
pub mod study;

use thiserror::Error;

/// Process exit codes of the runner.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// Anything not covered below, e.g. an unwritable output file.
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    /// No termination within the iteration cap, or accuracy requests ran out.
    pub const CAP_EXHAUSTED: i32 = 3;
    pub const AUDIT_VIOLATION: i32 = 4;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] trqda_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Core(trqda_core::Error::Config(_)) => exit::CONFIG,
            HarnessError::Core(trqda_core::Error::AccuracyExhausted { .. }) => exit::CAP_EXHAUSTED,
            _ => exit::FAILURE,
        }
    }
}
