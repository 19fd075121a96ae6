//! Experiment configuration files.

use std::path::{Path, PathBuf};

use guide_core::planner::RaaConfig;
use guide_core::tsum::EnvLinearModel;
use guide_core::{ComponentWeights, Constraint, SimConfig, Subtask, TaskSpec};
use guide_learn::{BootstrapConfig, ObsMode, PpoConfig, SacConfig, SACP_ZETA};
use serde::{Deserialize, Serialize};

use crate::HarnessError;

/// Policy learners and planning baselines the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Gsac,
    Sac,
    Sacp,
    Bsac,
    Gppo,
    Heu,
    Raa,
}

impl Algo {
    /// Table column order.
    pub const ALL: [Algo; 7] = [Algo::Sac, Algo::Sacp, Algo::Bsac, Algo::Raa, Algo::Heu, Algo::Gppo, Algo::Gsac];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Gsac => "gsac",
            Algo::Sac => "sac",
            Algo::Sacp => "sacp",
            Algo::Bsac => "bsac",
            Algo::Gppo => "gppo",
            Algo::Heu => "heu",
            Algo::Raa => "raa",
        }
    }

    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| HarnessError::Config(format!("unknown algorithm '{s}' (expected one of gsac, sac, sacp, bsac, gppo, heu, raa)")))
    }

    /// Whether the policy sees acceptable and current uncertainty.
    pub fn is_guided(self) -> bool {
        matches!(self, Algo::Gsac | Algo::Gppo)
    }

    /// Whether a policy is trained (as opposed to planned).
    pub fn is_learned(self) -> bool {
        !matches!(self, Algo::Heu | Algo::Raa)
    }

    pub fn obs_mode(self) -> ObsMode {
        if self.is_guided() {
            ObsMode::Augmented
        } else {
            ObsMode::Plain
        }
    }
}

impl std::fmt::Display for Algo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The seven task categories of the results table, each with its default
/// task.
pub const CATEGORIES: [(&str, &str); 7] = [
    ("waypoint", "visit [40, 60]"),
    ("context", "navigate to dock"),
    ("avoid", "avoid the central fountain"),
    ("perimeter", "go around the left fountain"),
    ("explore", "explore top-right quadrant"),
    ("restricted", "visit dock while avoiding top-right quadrant"),
    ("multi_goal", "Go to point [80,90] and then go around the central fountain and return to the dock."),
];

/// Category of a parsed task.
pub fn task_category(spec: &TaskSpec) -> &'static str {
    if spec.primaries.len() > 1 {
        return "multi_goal";
    }
    let region = spec.auxiliaries.iter().any(|c| matches!(c, Constraint::AvoidRegion(_) | Constraint::StayWithin(_)));
    if region {
        return "restricted";
    }
    if !spec.auxiliaries.is_empty() {
        return "avoid";
    }
    match spec.primaries.first() {
        Some(Subtask::GoalWaypoint { .. }) => "waypoint",
        Some(Subtask::GoalLandmark(_) | Subtask::ReturnTo(_)) => "context",
        Some(Subtask::Perimeter(_)) => "perimeter",
        Some(Subtask::Explore(_)) | None => "explore",
    }
}

/// Where the simulator configuration comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvSource {
    Path(PathBuf),
    Inline(Box<SimConfig>),
}

impl Default for EnvSource {
    fn default() -> Self {
        EnvSource::Inline(Box::default())
    }
}

impl EnvSource {
    pub fn resolve(&self) -> Result<SimConfig, HarnessError> {
        let cfg = match self {
            EnvSource::Inline(c) => (**c).clone(),
            EnvSource::Path(p) => SimConfig::load(p).map_err(|e| HarnessError::Config(e.to_string()))?,
        };
        cfg.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

fn lake_model() -> EnvLinearModel {
    EnvLinearModel::lake_default()
}

/// How the uncertainty map is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsumSettings {
    pub weights: ComponentWeights,
    pub u_min: f64,
    pub u_max: f64,
    /// Patch size in meters when embeddings are mocked.
    pub cell_size: f64,
    pub mock_dim: usize,
    pub mock_seed: u64,
    #[serde(default = "lake_model")]
    pub env_model: EnvLinearModel,
}

impl Default for TsumSettings {
    fn default() -> Self {
        Self {
            weights: ComponentWeights::default(),
            u_min: 0.1,
            u_max: 2.0,
            cell_size: 5.0,
            mock_dim: 64,
            mock_seed: 1,
            env_model: lake_model(),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_episodes() -> usize {
    20
}

fn default_steps() -> usize {
    100_000
}

fn default_embeddings() -> String {
    "mock".into()
}

fn default_zeta() -> f64 {
    SACP_ZETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task_text: String,
    /// Overrides the category derived from the parsed task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub algo: Algo,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_episodes")]
    pub episodes_per_seed: usize,
    /// Environment steps of training per seed; ignored by the planners.
    #[serde(default = "default_steps")]
    pub train_steps: usize,
    #[serde(default)]
    pub env: EnvSource,
    /// `"mock"` or the path of an embedding manifest (or its directory).
    #[serde(default = "default_embeddings")]
    pub embeddings: String,
    #[serde(default)]
    pub tsum: TsumSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub sac: SacConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default = "default_zeta")]
    pub sacp_zeta: f64,
    #[serde(default)]
    pub planner: RaaConfig,
}

impl ExperimentConfig {
    pub fn new(task_text: &str, algo: Algo) -> Self {
        Self {
            task_text: task_text.into(),
            category: None,
            algo,
            seeds: default_seeds(),
            episodes_per_seed: default_episodes(),
            train_steps: default_steps(),
            env: EnvSource::default(),
            embeddings: default_embeddings(),
            tsum: TsumSettings::default(),
            output_dir: None,
            sac: SacConfig::default(),
            ppo: PpoConfig::default(),
            bootstrap: BootstrapConfig::default(),
            sacp_zeta: SACP_ZETA,
            planner: RaaConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("experiment config: {e}")))
    }

    /// Load a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let EnvSource::Path(p) = &mut cfg.env {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.embeddings != "mock" && Path::new(&cfg.embeddings).is_relative() {
            cfg.embeddings = base.join(&cfg.embeddings).to_string_lossy().into_owned();
        }
        Ok(cfg)
    }

    /// Manifest file of the embedding table, or `None` for mock embeddings.
    pub fn embedding_manifest(&self) -> Result<Option<PathBuf>, HarnessError> {
        if self.embeddings == "mock" {
            return Ok(None);
        }
        let p = PathBuf::from(&self.embeddings);
        let manifest = if p.is_dir() { p.join("manifest.json") } else { p };
        if !manifest.is_file() {
            return Err(HarnessError::Config(format!("embeddings not found: {}", manifest.display())));
        }
        Ok(Some(manifest))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.task_text.trim().is_empty() {
            return bad("task_text is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.episodes_per_seed == 0 {
            return bad("episodes_per_seed must be positive".into());
        }
        if !(self.tsum.u_min.is_finite() && self.tsum.u_max.is_finite() && 0.0 < self.tsum.u_min && self.tsum.u_min < self.tsum.u_max) {
            return bad(format!("bad uncertainty range [{}, {}]", self.tsum.u_min, self.tsum.u_max));
        }
        if !(self.tsum.cell_size > 0.0) || self.tsum.mock_dim == 0 {
            return bad("tsum cell_size and mock_dim must be positive".into());
        }
        if !(self.sacp_zeta >= 0.0) {
            return bad("sacp_zeta must be non-negative".into());
        }
        self.env.resolve()?;
        self.embedding_manifest()?;
        let learn = |e: guide_learn::LearnError| HarnessError::Config(e.to_string());
        self.sac.validate().map_err(learn)?;
        self.ppo.validate().map_err(learn)?;
        self.bootstrap.validate().map_err(learn)?;
        self.planner.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }
}
