//! Experiment harness: configuration, training and greedy evaluation runs,
//! completion-rate tables and trajectory plots behind the `guide` tool.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod plot;
pub mod runs;

pub use config::{task_category, Algo, EnvSource, ExperimentConfig, TsumSettings, CATEGORIES};
pub use experiment::{evaluate, prepare, run_experiment, run_experiment_with, train, EpisodeRun, EvalOptions, ExperimentResult};
pub use metrics::{compute_tcr, table_layout, EpisodeLog, ResultRow, TrainRow};
pub use plot::{render_trajectory, TsumUnderlay};
pub use runs::{eval_run, table, train_run, RunManifest};

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "GUIDE_SEED";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("no episode logs to aggregate")]
    EmptyLogs,
}

impl HarnessError {
    /// Process exit status: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime(_) | HarnessError::EmptyLogs => 3,
        }
    }
}
