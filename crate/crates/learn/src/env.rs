//! Environments as seen by the learners.

use std::f64::consts::PI;

use guide_core::{Action, AsvSim, LocalizationMode, StepOutcome};

use crate::LearnError;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    /// Reward the learner optimizes.
    pub reward: f64,
    /// Environment reward before any learner-specific shaping.
    pub base_reward: f64,
    /// The episode ended in a terminal state.
    pub terminal: bool,
    /// The episode was cut off by the step limit.
    pub truncated: bool,
    pub completed_fraction: f64,
    pub exact_fix: bool,
}

impl EnvStep {
    pub fn episode_over(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment {
    fn obs_dim(&self) -> usize;
    /// Number of continuous action coordinates.
    fn action_dim(&self) -> usize;
    /// Whether actions carry a trailing binary mode.
    fn has_mode(&self) -> bool;
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, LearnError>;
    /// Applies a policy-space action (see [`crate::policy`]).
    fn step(&mut self, action: &[f64]) -> Result<EnvStep, LearnError>;
}

/// SAC-P shaping `r − ζ·u`.
pub fn sacp_reward(r_base: f64, u: f64, zeta: f64) -> f64 {
    r_base - zeta * u
}

/// Which observation a learner sees from the vehicle simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsMode {
    /// Observation plus acceptable and current uncertainty.
    Augmented,
    /// Observation only.
    Plain,
}

/// The vehicle simulator behind the [`Environment`] interface.
#[derive(Debug, Clone)]
pub struct AsvEnv {
    sim: AsvSim,
    mode: ObsMode,
    /// Weight of the uncertainty penalty; zero leaves the reward unchanged.
    pub uncertainty_penalty: f64,
    last: Option<StepOutcome>,
}

impl AsvEnv {
    pub fn new(sim: AsvSim, mode: ObsMode) -> Self {
        Self { sim, mode, uncertainty_penalty: 0.0, last: None }
    }

    pub fn sim(&self) -> &AsvSim {
        &self.sim
    }

    pub fn into_sim(self) -> AsvSim {
        self.sim
    }

    pub fn mode(&self) -> ObsMode {
        self.mode
    }

    /// Outcome of the latest reset or step.
    pub fn last_outcome(&self) -> Option<&StepOutcome> {
        self.last.as_ref()
    }

    fn encode(&self, out: &StepOutcome) -> Vec<f64> {
        match self.mode {
            ObsMode::Augmented => out.obs.to_vec(),
            ObsMode::Plain => out.obs.s.clone(),
        }
    }

    /// Maps a policy-space action onto the simulator's ranges: thrust
    /// `(u₀ + 1)/2 · λ_max`, heading `(u₁ + 1)·π`, Exact when the mode
    /// exceeds one half.
    pub fn to_sim_action(&self, action: &[f64]) -> Action {
        let lambda_max = self.sim.config().lambda_max;
        let eta = if action.get(2).is_some_and(|y| *y > 0.5) { LocalizationMode::Exact } else { LocalizationMode::Noisy };
        Action {
            lambda: ((action[0] + 1.0) / 2.0 * lambda_max).clamp(0.0, lambda_max),
            alpha: ((action[1] + 1.0) * PI).rem_euclid(2.0 * PI),
            eta,
        }
    }
}

impl Environment for AsvEnv {
    fn obs_dim(&self) -> usize {
        match self.mode {
            ObsMode::Augmented => self.sim.obs_dim() + 2,
            ObsMode::Plain => self.sim.obs_dim(),
        }
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn has_mode(&self) -> bool {
        true
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>, LearnError> {
        let out = self.sim.reset(seed)?;
        let obs = self.encode(&out);
        self.last = Some(out);
        Ok(obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep, LearnError> {
        if action.len() != 3 {
            return Err(LearnError::ShapeMismatch(format!("{} action components, expected 3", action.len())));
        }
        let out = self.sim.step(self.to_sim_action(action))?;
        let info = out.info;
        let ended_by_event = info.task_complete || info.collision || info.violation;
        let terminal = out.done && (ended_by_event || !info.truncated);
        let step = EnvStep {
            obs: self.encode(&out),
            reward: sacp_reward(out.reward, out.obs.u, self.uncertainty_penalty),
            base_reward: out.reward,
            terminal,
            truncated: out.done && !terminal,
            completed_fraction: info.completed_fraction,
            exact_fix: info.exact_fix,
        };
        self.last = Some(out);
        Ok(step)
    }
}

/// One-step continuous bandit: reward `−(a − target)²` for a single action
/// coordinate in (−1, 1); every episode is one step.
#[derive(Debug, Clone)]
pub struct ToyBandit {
    pub target: f64,
}

impl Environment for ToyBandit {
    fn obs_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn has_mode(&self) -> bool {
        false
    }

    fn reset(&mut self, _seed: u64) -> Result<Vec<f64>, LearnError> {
        Ok(vec![1.0])
    }

    fn step(&mut self, action: &[f64]) -> Result<EnvStep, LearnError> {
        let a = *action.first().ok_or_else(|| LearnError::ShapeMismatch("empty action".into()))?;
        let r = -(a - self.target).powi(2);
        Ok(EnvStep {
            obs: vec![1.0],
            reward: r,
            base_reward: r,
            terminal: true,
            truncated: false,
            completed_fraction: 1.0,
            exact_fix: false,
        })
    }
}
