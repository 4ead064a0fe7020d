//! Experiment runner: configuration, presets and the pipelines behind the `bsdelab` binary.

pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod presets;

pub use config::{ExperimentConfig, Pipeline};
pub use pipeline::{run, CheckResult, Outcome};
pub use presets::{preset, PRESETS};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(#[from] bsdelab_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// Process exit status: 2 for configuration problems, 3 for failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) | RunError::Io(_) => 3,
        }
    }
}
