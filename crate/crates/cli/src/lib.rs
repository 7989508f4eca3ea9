//! Experiment orchestration behind the `aoi-lab` binary.

pub mod commands;
pub mod config;

pub use config::RunConfig;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("acceptance checks failed: {0}")]
    Acceptance(String),
    #[error("sweep incomplete: {0}")]
    PartialSweep(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Calibration(_) => 2,
            CliError::Evaluation(_) => 3,
            CliError::Acceptance(_) => 4,
            CliError::PartialSweep(_) => 5,
        }
    }
}

impl From<aoi_lab_core::Error> for CliError {
    fn from(e: aoi_lab_core::Error) -> Self {
        use aoi_lab_core::Error as E;
        match e {
            E::InvalidArgument(m) => CliError::Usage(m),
            E::Calibration(m) => CliError::Calibration(m),
            other => CliError::Evaluation(other.to_string()),
        }
    }
}
