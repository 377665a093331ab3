//! Experiment runner and report emitter: ties datasets, training
//! methods, calibration metrics, and the theory checks into
//! reproducible command-line workflows.

pub mod config;
pub mod report;
pub mod runner;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Configuration problems; every violation is listed.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] oko_core::datasets::DataError),
    #[error(transparent)]
    Model(#[from] oko_core::model::ModelError),
    #[error(transparent)]
    Calibration(#[from] oko_core::calibration::CalibError),
    #[error(transparent)]
    Theory(#[from] oko_core::theoryverify::TheoryError),
    #[error("json: {0}")]
    Json(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Json(e.to_string())
    }
}

/// Process exit codes: 0 success, 1 validation failure, 2 check or run
/// failure.
pub mod exit_codes {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const FAILURE: i32 = 2;
}
