//! Seeded 2D surface-vehicle simulator with two localization modes.
//!
//! The vehicle is a first-order-lag unicycle: the commanded steering angle
//! is the new heading and speed relaxes toward `λ/λ_max · v_max`. The
//! on-board estimate either dead-reckons (its error grows as a Gaussian
//! random walk and the 1-σ uncertainty `u` accumulates in variance) or takes
//! an exact fix, which snaps the estimate to the truth at a reward cost.

mod evaluator;

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use evaluator::{approach_point, EvalEvent, TaskEvaluator};

use crate::geometry::{distance, Geometry};
use crate::rng::{self, Rng};
use crate::task::TaskSpec;
use crate::tsum::Tsum;
use crate::vocab::Vocabulary;

/// Scale applied to relative target offsets in the observation.
pub const OFFSET_SCALE: f64 = 50.0;
/// Observation entries before the per-subtask block.
pub const BASE_OBS_DIM: usize = 5;
/// Observation entries per primary subtask.
pub const PER_SUBTASK_OBS_DIM: usize = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("step called before reset")]
    NotReset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub width: f64,
    pub height: f64,
    /// Landmarks and regions; entries flagged `obstacle` are collision discs.
    pub places: Vocabulary,
    /// Name of the place the vehicle starts from.
    pub dock: String,
    pub dt: f64,
    pub v_max: f64,
    pub lambda_max: f64,
    pub drag: f64,
    pub sigma_step: f64,
    pub sigma_gps: f64,
    pub disturbance_gain: f64,
    pub c_exact: f64,
    pub c_noisy: f64,
    pub collision_penalty: f64,
    pub completion_bonus: f64,
    pub progress_gain: f64,
    pub max_steps: usize,
    pub hull_radius: f64,
    pub goal_radius: f64,
    pub corridor: f64,
    pub avoid_distance: f64,
    pub coverage_spacing: f64,
    pub perimeter_standoff: f64,
    pub perimeter_fraction: f64,
    pub explore_fraction: f64,
    pub approach_standoff: f64,
    /// End the episode as soon as a constraint is violated.
    pub end_on_violation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            width: 100.0,
            height: 100.0,
            places: Vocabulary::default_lake(),
            dock: "dock".into(),
            dt: 0.5,
            v_max: 1.03,
            lambda_max: 1.0,
            drag: 0.5,
            sigma_step: 0.15,
            sigma_gps: 0.05,
            disturbance_gain: 0.3,
            c_exact: 1.0,
            c_noisy: 0.05,
            collision_penalty: 50.0,
            completion_bonus: 100.0,
            progress_gain: 1.0,
            max_steps: 1000,
            hull_radius: 0.5,
            goal_radius: 1.5,
            corridor: 3.5,
            avoid_distance: 3.0,
            coverage_spacing: 1.0,
            perimeter_standoff: 5.0,
            perimeter_fraction: 0.95,
            explore_fraction: 0.3,
            approach_standoff: 2.0,
            end_on_violation: true,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Terminal speed under full thrust.
    pub fn a_max(&self) -> f64 {
        self.v_max * self.drag
    }

    pub fn dock_geometry(&self) -> Result<Geometry, SimError> {
        self.places
            .get(&self.dock)
            .map(|p| p.geometry)
            .ok_or_else(|| SimError::InvalidConfig(format!("dock '{}' is not a known place", self.dock)))
    }

    pub fn arena(&self) -> Geometry {
        Geometry::Rect { x0: 0.0, y0: 0.0, x1: self.width, y1: self.height }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        let positive = [
            ("width", self.width),
            ("height", self.height),
            ("dt", self.dt),
            ("v_max", self.v_max),
            ("lambda_max", self.lambda_max),
            ("drag", self.drag),
            ("sigma_gps", self.sigma_gps),
            ("goal_radius", self.goal_radius),
            ("corridor", self.corridor),
            ("avoid_distance", self.avoid_distance),
            ("coverage_spacing", self.coverage_spacing),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("sigma_step", self.sigma_step),
            ("disturbance_gain", self.disturbance_gain),
            ("c_noisy", self.c_noisy),
            ("collision_penalty", self.collision_penalty),
            ("completion_bonus", self.completion_bonus),
            ("progress_gain", self.progress_gain),
            ("hull_radius", self.hull_radius),
            ("perimeter_standoff", self.perimeter_standoff),
            ("approach_standoff", self.approach_standoff),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.c_noisy < self.c_exact) || !self.c_exact.is_finite() {
            return bad("c_noisy must be below c_exact");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        for f in [self.perimeter_fraction, self.explore_fraction] {
            if !(f > 0.0 && f <= 1.0) {
                return bad("coverage fractions must lie in (0, 1]");
            }
        }
        let dock = self.dock_geometry()?;
        let c = dock.center();
        if !(c.0 > 0.0 && c.0 < self.width && c.1 > 0.0 && c.1 < self.height) {
            return bad("dock lies outside the arena");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LocalizationMode {
    Noisy,
    Exact,
}

impl LocalizationMode {
    pub fn is_exact(self) -> bool {
        self == LocalizationMode::Exact
    }
}

/// Propulsion torque `lambda ∈ [0, λ_max]`, commanded heading `alpha ∈ [0, 2π)`
/// and localization mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub lambda: f64,
    pub alpha: f64,
    pub eta: LocalizationMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    pub x: f64,
    pub y: f64,
    /// 1-σ position uncertainty in meters.
    pub u: f64,
}

/// Policy input: the estimator-frame observation followed by the acceptable
/// uncertainty at the estimated position and the current uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub s: Vec<f64>,
    pub acceptable: f64,
    pub u: f64,
}

impl AugmentedState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.s.clone();
        v.push(self.acceptable);
        v.push(self.u);
        v
    }

    pub fn dim(&self) -> usize {
        self.s.len() + 2
    }
}

/// Per-step reward split by source; the reward is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardParts {
    pub progress: f64,
    pub completion: f64,
    pub collision: f64,
    pub localization: f64,
}

impl RewardParts {
    pub fn total(&self) -> f64 {
        self.progress + self.completion + self.collision + self.localization
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepInfo {
    pub step: usize,
    pub collision: bool,
    pub completed_fraction: f64,
    pub exact_fix: bool,
    pub violation: bool,
    pub task_complete: bool,
    pub truncated: bool,
    /// The action had to be clamped into range.
    pub clamped: bool,
    pub disturbed: bool,
    pub parts: RewardParts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: AugmentedState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Length of the estimator-frame observation for a task with `m` primaries.
pub fn observation_dim(m: usize) -> usize {
    BASE_OBS_DIM + PER_SUBTASK_OBS_DIM * m
}

#[derive(Debug, Clone)]
struct Episode {
    truth: TrueState,
    est: EstimatorState,
    eval: TaskEvaluator,
    steps: usize,
    done: bool,
}

#[derive(Debug, Clone)]
pub struct AsvSim {
    cfg: SimConfig,
    spec: TaskSpec,
    tsum: Tsum,
    obstacles: Vec<Geometry>,
    disturbances: Vec<((f64, f64), f64)>,
    rng: Rng,
    episode: Option<Episode>,
}

impl AsvSim {
    pub fn new(cfg: SimConfig, spec: TaskSpec, tsum: Tsum) -> Result<Self, SimError> {
        cfg.validate()?;
        let start = cfg.dock_geometry()?.center();
        // Validates names, waypoints and the start position up front.
        TaskEvaluator::new(&spec, &cfg.places, &cfg, start).map_err(SimError::InvalidConfig)?;
        if spec.primaries.is_empty() {
            return Err(SimError::InvalidConfig("task has no primary subtask".into()));
        }
        let obstacles = cfg.places.obstacles().map(|p| p.geometry).collect();
        let disturbances = cfg
            .places
            .places
            .iter()
            .filter_map(|p| p.disturbance_radius.map(|r| (p.geometry.center(), r)))
            .collect();
        Ok(Self { cfg, spec, tsum, obstacles, disturbances, rng: rng::stream(0, rng::streams::ENV), episode: None })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn tsum(&self) -> &Tsum {
        &self.tsum
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.cfg.places
    }

    pub fn obstacles(&self) -> &[Geometry] {
        &self.obstacles
    }

    pub fn obs_dim(&self) -> usize {
        observation_dim(self.spec.primaries.len())
    }

    pub fn true_state(&self) -> Option<TrueState> {
        self.episode.as_ref().map(|e| e.truth)
    }

    pub fn estimate(&self) -> Option<EstimatorState> {
        self.episode.as_ref().map(|e| e.est)
    }

    pub fn evaluator(&self) -> Option<&TaskEvaluator> {
        self.episode.as_ref().map(|e| &e.eval)
    }

    /// Current target of the active subtask as seen from the estimate.
    pub fn active_target(&self) -> Option<(f64, f64)> {
        let ep = self.episode.as_ref()?;
        let i = ep.eval.active()?;
        Some(ep.eval.target_point(i, (ep.est.x, ep.est.y)))
    }

    /// Obstacles plus everything the task marks as critical.
    pub fn critical_geometry(&self) -> Vec<Geometry> {
        let mut g = self.obstacles.clone();
        if let Some(ep) = &self.episode {
            g.extend(ep.eval.critical_geometry());
        }
        g
    }

    pub fn reset(&mut self, seed: u64) -> Result<StepOutcome, SimError> {
        let start = self.cfg.dock_geometry()?.center();
        let eval = TaskEvaluator::new(&self.spec, &self.cfg.places, &self.cfg, start).map_err(SimError::InvalidConfig)?;
        self.rng = rng::stream(seed, rng::streams::ENV);
        let heading = self.rng.gen_range(0.0..TAU);
        let truth = TrueState { x: start.0, y: start.1, heading, speed: 0.0 };
        let est = EstimatorState { x: start.0, y: start.1, u: self.cfg.sigma_gps };
        let ep = Episode { truth, est, eval, steps: 0, done: false };
        let info = StepInfo { completed_fraction: ep.eval.completed_fraction(), ..StepInfo::default() };
        self.episode = Some(ep);
        Ok(StepOutcome { obs: self.observe(), reward: 0.0, done: false, info })
    }

    fn gauss(&mut self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return 0.0;
        }
        let z: f64 = self.rng.sample(StandardNormal);
        sigma * z
    }

    fn disturbed(&self, p: (f64, f64)) -> bool {
        self.disturbances.iter().any(|(c, r)| distance(*c, p) <= *r)
    }

    fn collides(&self, p: (f64, f64)) -> bool {
        let h = self.cfg.hull_radius;
        if p.0 < h || p.0 > self.cfg.width - h || p.1 < h || p.1 > self.cfg.height - h {
            return true;
        }
        self.obstacles.iter().any(|g| g.signed_distance(p) < h)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, SimError> {
        let mut ep = self.episode.take().ok_or(SimError::NotReset)?;
        if ep.done {
            self.episode = Some(ep);
            return Err(SimError::NotReset);
        }
        let cfg = &self.cfg;
        let lambda_in = if action.lambda.is_finite() { action.lambda } else { 0.0 };
        let lambda = lambda_in.clamp(0.0, cfg.lambda_max);
        let alpha_in = if action.alpha.is_finite() { action.alpha } else { ep.truth.heading };
        let mut alpha = alpha_in.rem_euclid(TAU);
        if alpha >= TAU {
            alpha = 0.0;
        }
        let clamped = lambda != action.lambda || alpha != action.alpha;
        let (dt, a_max, drag) = (cfg.dt, cfg.a_max(), cfg.drag);
        let (sigma_step, sigma_gps, gain) = (cfg.sigma_step, cfg.sigma_gps, cfg.disturbance_gain);

        // Dynamics.
        let prev = (ep.truth.x, ep.truth.y);
        let active_before = ep.eval.active();
        let potential_before = active_before.map(|i| ep.eval.potential(i, prev));
        let speed = ep.truth.speed + dt * (lambda / cfg.lambda_max * a_max - drag * ep.truth.speed);
        let (dx, dy) = (dt * speed * alpha.cos(), dt * speed * alpha.sin());
        let disturbed = self.disturbed(prev);
        let (tx, ty) = if disturbed { (self.gauss(gain), self.gauss(gain)) } else { (0.0, 0.0) };
        ep.truth = TrueState { x: prev.0 + dx + tx, y: prev.1 + dy + ty, heading: alpha, speed };
        let now = (ep.truth.x, ep.truth.y);

        // Estimator.
        let exact_fix = action.eta.is_exact();
        if exact_fix {
            ep.est = EstimatorState { x: now.0, y: now.1, u: sigma_gps };
        } else {
            let (mut ex, mut ey) = (self.gauss(sigma_step), self.gauss(sigma_step));
            let mut var = ep.est.u * ep.est.u + sigma_step * sigma_step;
            if disturbed {
                ex += self.gauss(gain);
                ey += self.gauss(gain);
                var += gain * gain;
            }
            ep.est = EstimatorState { x: ep.est.x + dx + ex, y: ep.est.y + dy + ey, u: var.sqrt().max(sigma_gps) };
        }

        // Events and reward.
        let collision = self.collides(now);
        let event = ep.eval.update(now);
        let cfg = &self.cfg;
        let mut parts = RewardParts::default();
        if let (Some(i), Some(before)) = (active_before, potential_before) {
            parts.progress = cfg.progress_gain * (ep.eval.potential(i, now) - before);
        }
        if event.task_completed {
            parts.completion = cfg.completion_bonus;
        }
        if collision {
            parts.collision = -cfg.collision_penalty;
        }
        parts.localization = if exact_fix { -cfg.c_exact } else { -cfg.c_noisy };
        ep.steps += 1;
        let truncated = ep.steps >= cfg.max_steps;
        let violation = ep.eval.violated();
        ep.done = event.task_completed || collision || truncated || (violation && cfg.end_on_violation);
        let info = StepInfo {
            step: ep.steps,
            collision,
            completed_fraction: ep.eval.completed_fraction(),
            exact_fix,
            violation: event.violation,
            task_complete: ep.eval.is_complete(),
            truncated,
            clamped,
            disturbed,
            parts,
        };
        let done = ep.done;
        self.episode = Some(ep);
        Ok(StepOutcome { obs: self.observe(), reward: parts.total(), done, info })
    }

    fn observe(&self) -> AugmentedState {
        let ep = self.episode.as_ref().expect("observe requires an episode");
        let est = (ep.est.x, ep.est.y);
        let mut s = Vec::with_capacity(self.obs_dim());
        s.push(est.0 / self.cfg.width);
        s.push(est.1 / self.cfg.height);
        s.push(ep.truth.heading.sin());
        s.push(ep.truth.heading.cos());
        s.push(ep.truth.speed / self.cfg.v_max);
        let active = ep.eval.active();
        for i in 0..ep.eval.n_subtasks() {
            if ep.eval.subtask_done(i) || ep.eval.violated() {
                s.extend_from_slice(&[0.0, 0.0, 0.0]);
            } else {
                let t = ep.eval.target_point(i, est);
                let flag = if active == Some(i) { 1.0 } else { 0.0 };
                s.extend_from_slice(&[(t.0 - est.0) / OFFSET_SCALE, (t.1 - est.1) / OFFSET_SCALE, flag]);
            }
        }
        AugmentedState { s, acceptable: self.tsum.sample(est), u: ep.est.u }
    }
}

/// One row of the trajectory log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub true_x: f64,
    pub true_y: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub u: f64,
    pub eta: u8,
    pub reward: f64,
    /// `|`-separated event names: start, exact, collision, violation, complete, truncated.
    pub events: String,
}

impl TrajectoryRecord {
    /// Row describing the state `sim` is in after producing `outcome`.
    pub fn capture(sim: &AsvSim, outcome: &StepOutcome) -> Option<Self> {
        let truth = sim.true_state()?;
        let est = sim.estimate()?;
        let info = &outcome.info;
        let mut events = Vec::new();
        if info.step == 0 {
            events.push("start");
        }
        for (flag, name) in [
            (info.exact_fix, "exact"),
            (info.collision, "collision"),
            (info.violation, "violation"),
            (info.task_complete && outcome.done, "complete"),
            (info.truncated, "truncated"),
        ] {
            if flag {
                events.push(name);
            }
        }
        Some(Self {
            step: info.step,
            true_x: truth.x,
            true_y: truth.y,
            est_x: est.x,
            est_y: est.y,
            u: est.u,
            eta: info.exact_fix as u8,
            reward: outcome.reward,
            events: events.join("|"),
        })
    }

    pub fn has_event(&self, name: &str) -> bool {
        self.events.split('|').any(|e| e == name)
    }
}
