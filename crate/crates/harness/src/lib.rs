//! Experiment harness: runs the repeated measurement protocol against the
//! simulated target and turns the exported iterations into statistics.

pub mod analysis;
pub mod experiment;
pub mod external;
pub mod report;

use encoms_core::adaptation::AdaptationError;
use encoms_core::stats::StatsError;
use encoms_core::store::StoreError;
use thiserror::Error;

pub use analysis::{analyze, Report};
pub use experiment::{run_experiment, ExperimentConfig, Scenario};
pub use report::{render_report, OutputFormat};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("iteration {iteration} failed: {reason}")]
    IterationFailed { iteration: u32, reason: String },
    #[error("variant `{variant}` has {found} iterations, at least {required} are needed")]
    InsufficientIterations {
        variant: String,
        found: usize,
        required: usize,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Adaptation(#[from] AdaptationError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<StoreError> for HarnessError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::SchemaViolation(path) => HarnessError::Schema(path),
            other => HarnessError::Store(other),
        }
    }
}

impl HarnessError {
    /// Process exit status for the command line.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Schema(_) => 3,
            HarnessError::Store(StoreError::CorruptLog { .. }) => 3,
            _ => 2,
        }
    }
}
