//! Task interpretation and simulation for uncertainty-aware navigation.
//!
//! A natural-language task is parsed into subtasks and constraints
//! ([`task`]), scored against per-cell patch embeddings ([`embedding`]) and
//! turned into a map of acceptable localization uncertainty ([`tsum`]). The
//! [`sim`] module provides the surface-vehicle environment the policies are
//! trained in, and [`planner`] the non-learning baselines.

pub mod embedding;
pub mod geometry;
pub mod linalg;
pub mod pgm;
pub mod planner;
pub mod rng;
pub mod sim;
pub mod task;
pub mod tsum;
pub mod vocab;

pub use embedding::{EmbeddingError, EmbeddingTable, EmbeddingVector, PatchGrid};
pub use geometry::Geometry;
pub use sim::{Action, AsvSim, LocalizationMode, SimConfig, SimError, StepOutcome};
pub use task::{parse_task, Constraint, ParseError, Subtask, TaskSpec};
pub use tsum::{ComponentWeights, Tsum, TsumError};
pub use vocab::{PlaceKind, PlaceSpec, Vocabulary};

/// Configuration and I/O failures shared by the loaders in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}
