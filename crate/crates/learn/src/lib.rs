//! Small hand-differentiated networks and the policy learners: soft
//! actor-critic (with or without uncertainty-augmented observations, with an
//! uncertainty penalty, or with a bootstrapped critic ensemble) and PPO.

pub mod buffer;
pub mod checkpoint;
pub mod env;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod sac;

use guide_core::{AsvSim, SimError};
use serde::{Deserialize, Serialize};

pub use buffer::{bootstrap_mask, Batch, ReplayBuffer, Transition};
pub use checkpoint::Checkpoint;
pub use env::{sacp_reward, AsvEnv, EnvStep, Environment, ObsMode, ToyBandit};
pub use mlp::{gradient_check, soft_update, Adam, Mlp};
pub use policy::{GaussianPolicy, PolicyNoise};
pub use ppo::{clipped_objective, gae, surrogate_ratio, train_ppo, PpoConfig};
pub use sac::{alpha_loss, bellman_target, policy_loss, q_loss, train_sac, BootstrapConfig, SacConfig, ValueRule};

/// Random streams used by the learners in addition to
/// [`guide_core::rng::streams`].
pub mod streams {
    /// Noise for gradient updates.
    pub const UPDATE: u64 = 16;
    /// Per-episode environment seeds.
    pub const EPISODES: u64 = 17;
}

/// Default SAC-P uncertainty penalty weight.
pub const SACP_ZETA: f64 = 0.4;

#[derive(Debug, thiserror::Error)]
pub enum LearnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("need {need} samples, have {have}")]
    InsufficientData { have: usize, need: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("environment: {0}")]
    Env(#[from] SimError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("bad file format: {0}")]
    Format(String),
}

/// Summary of one finished training episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Environment steps taken when the episode ended.
    pub step: usize,
    pub episode: usize,
    /// Undiscounted environment reward.
    pub ret: f64,
    /// Completed fraction of the task, in percent.
    pub tcr: f64,
    pub alpha: f64,
    pub q_loss: f64,
    pub policy_loss: f64,
    pub exact_fix_count: usize,
    /// Mean standard deviation across critics at the last update.
    pub value_spread: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: GaussianPolicy,
    pub metrics: Vec<EpisodeMetrics>,
    pub steps: usize,
}

/// SAC on the observation augmented with acceptable and current uncertainty.
pub fn train_gsac(sim: AsvSim, cfg: &SacConfig, steps: usize, seed: u64) -> Result<TrainOutput, LearnError> {
    train_sac(&mut AsvEnv::new(sim, ObsMode::Augmented), cfg, None, steps, seed)
}

/// SAC on the plain observation.
pub fn train_sac_ablation(sim: AsvSim, cfg: &SacConfig, steps: usize, seed: u64) -> Result<TrainOutput, LearnError> {
    train_sac(&mut AsvEnv::new(sim, ObsMode::Plain), cfg, None, steps, seed)
}

/// SAC on the plain observation with reward `r − ζ·u`.
pub fn train_sacp(sim: AsvSim, cfg: &SacConfig, zeta: f64, steps: usize, seed: u64) -> Result<TrainOutput, LearnError> {
    let mut env = AsvEnv::new(sim, ObsMode::Plain);
    env.uncertainty_penalty = zeta;
    train_sac(&mut env, cfg, None, steps, seed)
}

/// SAC on the plain observation with a bootstrapped, pessimistic critic
/// ensemble.
pub fn train_bsac(
    sim: AsvSim,
    cfg: &SacConfig,
    ensemble: &BootstrapConfig,
    steps: usize,
    seed: u64,
) -> Result<TrainOutput, LearnError> {
    train_sac(&mut AsvEnv::new(sim, ObsMode::Plain), cfg, Some(ensemble), steps, seed)
}

/// PPO on the augmented observation.
pub fn train_gppo(sim: AsvSim, cfg: &PpoConfig, steps: usize, seed: u64) -> Result<TrainOutput, LearnError> {
    train_ppo(&mut AsvEnv::new(sim, ObsMode::Augmented), cfg, steps, seed)
}
