//! Run directories: what `train` leaves behind and `eval` / `table` read.
//!
//! A run directory holds `run.json` (the resolved configuration and seed),
//! `metrics.csv` (one row per training episode), `policy.ckpt` for learned
//! policies, and after evaluation `eval.csv`, `result.csv` and one
//! trajectory log per episode under `trajectories/`.

use std::path::{Path, PathBuf};

use guide_learn::{Checkpoint, EpisodeMetrics};
use serde::{Deserialize, Serialize};

use crate::config::{Algo, EnvSource, ExperimentConfig};
use crate::experiment::{evaluate, prepare, train, EvalOptions};
use crate::metrics::{
    read_csv_file, write_csv_file, EpisodeLog, ResultRow, TrainRow, EPISODE_HEADER, RESULT_HEADER, STEP_HEADER,
    TRAIN_HEADER,
};
use crate::HarnessError;

pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "policy.ckpt";
pub const EVAL_FILE: &str = "eval.csv";
pub const RESULT_FILE: &str = "result.csv";
pub const TRAJECTORY_DIR: &str = "trajectories";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub algo: Algo,
    pub seed: u64,
    pub task_category: String,
    /// Configuration with the environment inlined, so the run does not
    /// depend on the original files.
    pub config: ExperimentConfig,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Runtime(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io(dir))
}

pub fn trajectory_path(dir: &Path, episode: usize) -> PathBuf {
    dir.join(TRAJECTORY_DIR).join(format!("ep{episode:03}.csv"))
}

/// Training metrics and episode logs of one seed.
pub fn write_seed_outputs(dir: &Path, metrics: &[EpisodeMetrics], logs: &[EpisodeLog]) -> Result<(), HarnessError> {
    create_dir(dir)?;
    let rows: Vec<TrainRow> = metrics.iter().map(TrainRow::from).collect();
    write_csv_file(&dir.join(METRICS_FILE), &rows, &TRAIN_HEADER)?;
    write_csv_file(&dir.join(EVAL_FILE), logs, &EPISODE_HEADER)
}

/// Train one seed and write the run directory.
pub fn train_run(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<RunManifest, HarnessError> {
    let mut cfg = cfg.clone();
    cfg.env = EnvSource::Inline(Box::new(cfg.env.resolve()?));
    cfg.seeds = vec![seed];
    cfg.output_dir = None;
    let prepared = prepare(&cfg)?;
    let trained = train(&cfg, &prepared, seed)?;
    create_dir(dir)?;
    let rows: Vec<TrainRow> = trained.metrics.iter().map(TrainRow::from).collect();
    write_csv_file(&dir.join(METRICS_FILE), &rows, &TRAIN_HEADER)?;
    if let Some(policy) = &trained.policy {
        let algo_cfg = match cfg.algo {
            Algo::Gppo => serde_json::to_value(&cfg.ppo),
            _ => serde_json::to_value(&cfg.sac),
        }
        .map_err(|e| HarnessError::Runtime(e.to_string()))?;
        let ck = Checkpoint::for_policy(cfg.algo.as_str(), cfg.train_steps, cfg.algo.obs_mode(), algo_cfg, policy);
        ck.save(dir.join(CHECKPOINT_FILE)).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    }
    let manifest = RunManifest { algo: cfg.algo, seed, task_category: prepared.category.clone(), config: cfg };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let path = dir.join(RUN_FILE);
    std::fs::write(&path, text + "\n").map_err(io(&path))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest, HarnessError> {
    let path = dir.join(RUN_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

/// Evaluate a trained run greedily for `episodes` episodes, writing the
/// episode logs, the aggregated row and the trajectories.
pub fn eval_run(dir: &Path, episodes: usize) -> Result<ResultRow, HarnessError> {
    if episodes == 0 {
        return Err(HarnessError::Config("at least one episode is required".into()));
    }
    let manifest = load_manifest(dir)?;
    let cfg = &manifest.config;
    let prepared = prepare(cfg)?;
    let policy = if cfg.algo.is_learned() {
        let path = dir.join(CHECKPOINT_FILE);
        let ck = Checkpoint::load(&path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if ck.header.observation != cfg.algo.obs_mode() || ck.header.algo != cfg.algo.as_str() {
            return Err(HarnessError::Config(format!("{} does not belong to a {} run", path.display(), cfg.algo)));
        }
        Some(ck.policy().map_err(|e| HarnessError::Config(e.to_string()))?)
    } else {
        None
    };
    let opts = EvalOptions { episodes, mode_override: None, record: true };
    let runs = evaluate(cfg, &prepared, policy.as_ref(), manifest.seed, &opts)?;
    create_dir(&dir.join(TRAJECTORY_DIR))?;
    for r in &runs {
        write_csv_file(&trajectory_path(dir, r.log.episode), &r.trajectory, &STEP_HEADER)?;
    }
    let logs: Vec<EpisodeLog> = runs.into_iter().map(|r| r.log).collect();
    write_csv_file(&dir.join(EVAL_FILE), &logs, &EPISODE_HEADER)?;
    let row = ResultRow::from_logs(&manifest.task_category, manifest.algo, &logs)?;
    write_csv_file(&dir.join(RESULT_FILE), std::slice::from_ref(&row), &RESULT_HEADER)?;
    Ok(row)
}

/// Aggregate evaluated runs: one row per (category, algorithm), in order of
/// first appearance, pooling the episodes of all seeds.
pub fn table(run_dirs: &[PathBuf]) -> Result<Vec<ResultRow>, HarnessError> {
    let mut groups: Vec<((String, Algo), Vec<EpisodeLog>)> = Vec::new();
    for dir in run_dirs {
        let m = load_manifest(dir)?;
        let path = dir.join(EVAL_FILE);
        if !path.is_file() {
            return Err(HarnessError::Config(format!("{} has not been evaluated", dir.display())));
        }
        let logs: Vec<EpisodeLog> = read_csv_file(&path)?;
        let key = (m.task_category, m.algo);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, all)) => all.extend(logs),
            None => groups.push((key, logs)),
        }
    }
    groups.iter().map(|((cat, algo), logs)| ResultRow::from_logs(cat, *algo, logs)).collect()
}
