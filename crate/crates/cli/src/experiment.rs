//! Parse, build the uncertainty map, train or plan, evaluate, aggregate.

use guide_core::embedding::{load_table, mock_table};
use guide_core::planner::{Planner, PlannerController};
use guide_core::rng::{stream, streams};
use guide_core::sim::TrajectoryRecord;
use guide_core::tsum::{aggregate, build_tsum, EnvFeatureMap, Field};
use guide_core::{parse_task, Action, AsvSim, LocalizationMode, PatchGrid, SimConfig, StepOutcome, TaskSpec, Tsum};
use guide_learn::{
    train_bsac, train_gppo, train_gsac, train_sac_ablation, train_sacp, AsvEnv, EpisodeMetrics, Environment,
    GaussianPolicy,
};
use rand::RngCore;

use crate::config::{task_category, Algo, ExperimentConfig};
use crate::metrics::{EpisodeLog, ResultRow};
use crate::HarnessError;

/// Everything an experiment needs before any seed runs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub env: SimConfig,
    pub spec: TaskSpec,
    pub category: String,
    pub sim: AsvSim,
}

fn rt(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// The uncertainty map for `spec`, from mock or stored embeddings.
pub fn task_tsum(cfg: &ExperimentConfig, env: &SimConfig, spec: &TaskSpec) -> Result<Tsum, HarnessError> {
    let s = &cfg.tsum;
    let table = match cfg.embedding_manifest()? {
        None => {
            let grid = PatchGrid::covering(env.width, env.height, s.cell_size).map_err(rt)?;
            mock_table(&env.places, grid, spec, s.mock_dim, s.mock_seed).map_err(rt)?
        }
        Some(path) => load_table(&path).map_err(rt)?,
    };
    let fmap = EnvFeatureMap::synthetic(&env.places, *table.grid());
    build_tsum(spec, &table, &fmap, &s.env_model, s.weights, s.u_min, s.u_max).map_err(rt)
}

/// A uniform map for learners and planners that never look at it.
fn flat_tsum(cfg: &ExperimentConfig, env: &SimConfig) -> Result<Tsum, HarnessError> {
    let grid = PatchGrid::covering(env.width, env.height, cfg.tsum.cell_size).map_err(rt)?;
    let f = Field::constant(grid, 0.0);
    aggregate(&f, &f, &f, cfg.tsum.weights, cfg.tsum.u_min, cfg.tsum.u_max).map_err(rt)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    let env = cfg.env.resolve()?;
    let spec = parse_task(&cfg.task_text, &env.places).map_err(|e| HarnessError::Config(format!("task: {e}")))?;
    let tsum = if cfg.algo.is_guided() { task_tsum(cfg, &env, &spec)? } else { flat_tsum(cfg, &env)? };
    let sim = AsvSim::new(env.clone(), spec.clone(), tsum).map_err(|e| HarnessError::Config(e.to_string()))?;
    let category = cfg.category.clone().unwrap_or_else(|| task_category(&spec).to_string());
    Ok(Prepared { env, spec, category, sim })
}

/// Result of the training phase for one seed.
#[derive(Debug, Clone)]
pub struct Trained {
    /// `None` for the planning baselines.
    pub policy: Option<GaussianPolicy>,
    pub metrics: Vec<EpisodeMetrics>,
}

pub fn train(cfg: &ExperimentConfig, prepared: &Prepared, seed: u64) -> Result<Trained, HarnessError> {
    let sim = prepared.sim.clone();
    let steps = cfg.train_steps;
    let out = match cfg.algo {
        Algo::Gsac => train_gsac(sim, &cfg.sac, steps, seed),
        Algo::Sac => train_sac_ablation(sim, &cfg.sac, steps, seed),
        Algo::Sacp => train_sacp(sim, &cfg.sac, cfg.sacp_zeta, steps, seed),
        Algo::Bsac => train_bsac(sim, &cfg.sac, &cfg.bootstrap, steps, seed),
        Algo::Gppo => train_gppo(sim, &cfg.ppo, steps, seed),
        Algo::Heu | Algo::Raa => return Ok(Trained { policy: None, metrics: Vec::new() }),
    }
    .map_err(|e| HarnessError::Runtime(format!("seed {seed}, training: {e}")))?;
    Ok(Trained { policy: Some(out.policy), metrics: out.metrics })
}

/// Evaluation settings.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub episodes: usize,
    /// Replace every chosen localization mode.
    pub mode_override: Option<LocalizationMode>,
    /// Keep per-step trajectories.
    pub record: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub log: EpisodeLog,
    /// Empty unless recording was requested.
    pub trajectory: Vec<TrajectoryRecord>,
}

/// Environment seeds of the evaluation episodes for one run seed.
pub fn eval_env_seeds(seed: u64, episodes: usize) -> Vec<u64> {
    let mut rng = stream(seed, streams::EVAL);
    (0..episodes).map(|_| rng.next_u64()).collect()
}

fn record(sim: &AsvSim, out: &StepOutcome) -> TrajectoryRecord {
    TrajectoryRecord::capture(sim, out).expect("episode in progress")
}

enum Driver<'a> {
    Policy(&'a GaussianPolicy, AsvEnv),
    Planner(PlannerController, AsvSim),
}

impl Driver<'_> {
    fn sim(&self) -> &AsvSim {
        match self {
            Driver::Policy(_, env) => env.sim(),
            Driver::Planner(_, sim) => sim,
        }
    }
}

/// Greedy rollouts: mean action, localization mode thresholded at 0.5.
pub fn evaluate(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    policy: Option<&GaussianPolicy>,
    seed: u64,
    opts: &EvalOptions,
) -> Result<Vec<EpisodeRun>, HarnessError> {
    let mut driver = match (cfg.algo, policy) {
        (Algo::Heu, _) => Driver::Planner(PlannerController::new(Planner::Heu, cfg.planner), prepared.sim.clone()),
        (Algo::Raa, _) => Driver::Planner(PlannerController::new(Planner::Raa, cfg.planner), prepared.sim.clone()),
        (_, Some(p)) => Driver::Policy(p, AsvEnv::new(prepared.sim.clone(), cfg.algo.obs_mode())),
        (a, None) => return Err(HarnessError::Runtime(format!("{a} needs a trained policy"))),
    };
    let mut runs = Vec::with_capacity(opts.episodes);
    for (episode, env_seed) in eval_env_seeds(seed, opts.episodes).into_iter().enumerate() {
        let err = |e: &dyn std::fmt::Display| HarnessError::Runtime(format!("seed {seed}, episode {episode}: {e}"));
        let mut trajectory = Vec::new();
        let mut log = EpisodeLog {
            seed,
            episode,
            env_seed,
            steps: 0,
            completed_fraction: 0.0,
            reward: 0.0,
            exact_fixes: 0,
            collision: false,
            violation: false,
            complete: false,
        };
        let (mut obs, first) = match &mut driver {
            Driver::Policy(_, env) => {
                let obs = env.reset(env_seed).map_err(|e| err(&e))?;
                (obs, env.last_outcome().cloned().expect("reset"))
            }
            Driver::Planner(ctrl, sim) => {
                ctrl.reset();
                (Vec::new(), sim.reset(env_seed).map_err(|e| err(&e))?)
            }
        };
        if opts.record {
            trajectory.push(record(driver.sim(), &first));
        }
        loop {
            let out = match &mut driver {
                Driver::Policy(p, env) => {
                    let mut a = p.act_greedy(&obs).map_err(|e| err(&e))?;
                    if let Some(m) = opts.mode_override {
                        a[2] = if m.is_exact() { 1.0 } else { 0.0 };
                    }
                    let st = env.step(&a).map_err(|e| err(&e))?;
                    obs = st.obs;
                    env.last_outcome().cloned().expect("stepped")
                }
                Driver::Planner(ctrl, sim) => {
                    let mut a: Action = ctrl.act(sim);
                    if let Some(m) = opts.mode_override {
                        a.eta = m;
                    }
                    sim.step(a).map_err(|e| err(&e))?
                }
            };
            let info = &out.info;
            log.steps += 1;
            log.reward += out.reward;
            log.exact_fixes += usize::from(info.exact_fix);
            log.collision |= info.collision;
            log.violation |= info.violation;
            log.completed_fraction = info.completed_fraction;
            log.complete = info.task_complete;
            if opts.record {
                trajectory.push(record(driver.sim(), &out));
            }
            if out.done {
                break;
            }
        }
        runs.push(EpisodeRun { log, trajectory });
    }
    Ok(runs)
}

/// Outcome of [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub row: ResultRow,
    pub episodes: Vec<EpisodeLog>,
    /// Training metrics per seed, in seed order.
    pub training: Vec<Vec<EpisodeMetrics>>,
}

/// Run every seed of `cfg` and aggregate. When `output_dir` is set, each
/// seed's training metrics and episode logs are written there as CSV along
/// with the aggregated row.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    run_experiment_with(cfg, &EvalOptions { episodes: cfg.episodes_per_seed, ..EvalOptions::default() })
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: &EvalOptions) -> Result<ExperimentResult, HarnessError> {
    let prepared = prepare(cfg)?;
    let mut episodes = Vec::new();
    let mut training = Vec::new();
    for &seed in &cfg.seeds {
        let trained = train(cfg, &prepared, seed)?;
        let runs = evaluate(cfg, &prepared, trained.policy.as_ref(), seed, opts)?;
        let logs: Vec<EpisodeLog> = runs.into_iter().map(|r| r.log).collect();
        if let Some(dir) = &cfg.output_dir {
            crate::runs::write_seed_outputs(&dir.join(format!("seed-{seed}")), &trained.metrics, &logs)?;
        }
        episodes.extend(logs);
        training.push(trained.metrics);
    }
    let row = ResultRow::from_logs(&prepared.category, cfg.algo, &episodes)?;
    if let Some(dir) = &cfg.output_dir {
        crate::metrics::write_csv_file(&dir.join("result.csv"), std::slice::from_ref(&row), &crate::metrics::RESULT_HEADER)?;
    }
    Ok(ExperimentResult { row, episodes, training })
}
