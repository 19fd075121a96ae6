use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use guide_cli::metrics::{read_csv_file, write_csv_file, RESULT_HEADER};
use guide_cli::runs::{self, RUN_FILE};
use guide_cli::{
    render_trajectory, table_layout, task_category, Algo, ExperimentConfig, HarnessError, TsumUnderlay,
    SEED_ENV,
};
use guide_core::pgm::Gray;
use guide_core::sim::TrajectoryRecord;
use guide_core::tsum::TsumSidecar;
use guide_core::{parse_task, Geometry, SimConfig, Vocabulary};

#[derive(Parser)]
#[command(name = "guide", version, about = "Task-guided uncertainty-aware navigation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a task sentence and print its structured form.
    Parse {
        #[arg(long)]
        task: String,
        /// Place vocabulary (a list of places or an environment file).
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Build the uncertainty map of a task and export it as a PGM raster.
    Tsum {
        #[arg(long)]
        task: String,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Embedding manifest or its directory, or `mock`.
        #[arg(long, default_value = "mock")]
        embeddings: String,
        #[arg(long)]
        out: PathBuf,
        /// Environment file giving the arena size.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Patch size in meters for mock embeddings.
        #[arg(long, default_value_t = 5.0)]
        cell_size: f64,
    },
    /// Train one seed and write a run directory.
    Train {
        #[arg(long)]
        algo: String,
        #[arg(long)]
        config: PathBuf,
        /// Defaults to $GUIDE_SEED, then the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained run greedily.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Defaults to the configured episodes per seed.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Aggregate evaluated runs into a results table.
    Table {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw one trajectory log as SVG.
    Plot {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        tsum: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

fn load_vocab(path: Option<&Path>) -> Result<Vocabulary, HarnessError> {
    match path {
        Some(p) => Vocabulary::load(p).map_err(config_err),
        None => Ok(Vocabulary::default_lake()),
    }
}

fn load_env(path: Option<&Path>) -> Result<SimConfig, HarnessError> {
    match path {
        Some(p) => SimConfig::load(p).map_err(config_err),
        None => Ok(SimConfig::default()),
    }
}

/// Arena spanned by the places, from the origin.
fn vocab_extent(vocab: &Vocabulary) -> (f64, f64) {
    vocab.places.iter().fold((0.0, 0.0), |(w, h), p| match p.geometry {
        Geometry::Disc { cx, cy, r } => (f64::max(w, cx + r), f64::max(h, cy + r)),
        Geometry::Rect { x1, y1, .. } => (f64::max(w, x1), f64::max(h, y1)),
    })
}

fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

/// Print to stdout. A closed pipe (e.g. `guide parse ... | head`) is not an
/// error.
fn emit(text: &str) -> Result<(), HarnessError> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime_err(e)),
        _ => Ok(()),
    }
}

fn seed_override() -> Result<Option<u64>, HarnessError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v:?} is not a seed"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Parse { task, vocab } => {
            let vocab = load_vocab(vocab.as_deref())?;
            let spec = parse_task(&task, &vocab).map_err(config_err)?;
            let out = serde_json::json!({ "category": task_category(&spec), "spec": spec });
            emit(&(serde_json::to_string_pretty(&out).map_err(runtime_err)? + "\n"))?;
        }
        Command::Tsum { task, vocab, embeddings, out, env, cell_size } => {
            let mut sim = load_env(env.as_deref())?;
            if let Some(v) = vocab.as_deref() {
                sim.places = load_vocab(Some(v))?;
                if env.is_none() {
                    (sim.width, sim.height) = vocab_extent(&sim.places);
                }
            }
            let mut cfg = ExperimentConfig::new(&task, Algo::Gsac);
            cfg.embeddings = embeddings;
            cfg.tsum.cell_size = cell_size;
            let spec = parse_task(&task, &sim.places).map_err(config_err)?;
            let tsum = guide_cli::experiment::task_tsum(&cfg, &sim, &spec)?;
            tsum.to_pgm().write(&out).map_err(runtime_err)?;
            let side = serde_json::to_string_pretty(&tsum.sidecar()).map_err(runtime_err)?;
            let side_path = sidecar_path(&out);
            std::fs::write(&side_path, side + "\n").map_err(|e| runtime_err(format!("{}: {e}", side_path.display())))?;
            emit(&format!("wrote {} and {}\n", out.display(), side_path.display()))?;
        }
        Command::Train { algo, config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.algo = Algo::parse(&algo)?;
            let seed = match (seed, seed_override()?) {
                (Some(s), _) | (None, Some(s)) => s,
                (None, None) => *cfg.seeds.first().ok_or_else(|| config_err("at least one seed is required"))?,
            };
            let m = runs::train_run(&cfg, seed, &out)?;
            emit(&format!("trained {} seed {} ({}) -> {}\n", m.algo, m.seed, m.task_category, out.join(RUN_FILE).display()))?;
        }
        Command::Eval { run, episodes } => {
            let episodes = match episodes {
                Some(k) => k,
                None => runs::load_manifest(&run)?.config.episodes_per_seed,
            };
            let row = runs::eval_run(&run, episodes)?;
            emit(&format!(
                "{} {}: TCR {:.1}%, reward {:.2}, exact fixes {:.2} over {} episodes\n",
                row.task_category, row.algo, row.tcr_percent, row.avg_reward, row.avg_exact_fixes, row.n_episodes
            ))?;
        }
        Command::Table { runs: dirs, out } => {
            let rows = runs::table(&dirs)?;
            write_csv_file(&out, &rows, &RESULT_HEADER)?;
            let layout = table_layout(&rows);
            let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
            let layout_path = out.with_file_name(format!("{stem}_table.csv"));
            std::fs::write(&layout_path, &layout).map_err(|e| runtime_err(format!("{}: {e}", layout_path.display())))?;
            emit(&layout)?;
        }
        Command::Plot { log, env, tsum, out } => {
            let env = load_env(env.as_deref())?;
            let records: Vec<TrajectoryRecord> = read_csv_file(&log).map_err(config_err)?;
            if records.is_empty() {
                return Err(HarnessError::Config(format!("{} has no rows", log.display())));
            }
            let underlay = match tsum {
                Some(p) => {
                    let img = Gray::read(&p).map_err(config_err)?;
                    let side = sidecar_path(&p);
                    let sidecar: Option<TsumSidecar> = if side.is_file() {
                        let text = std::fs::read_to_string(&side).map_err(config_err)?;
                        Some(serde_json::from_str(&text).map_err(config_err)?)
                    } else {
                        None
                    };
                    Some(TsumUnderlay::new(img, sidecar.as_ref(), &env))
                }
                None => None,
            };
            let svg = render_trajectory(&records, &env, underlay.as_ref());
            std::fs::write(&out, svg).map_err(|e| runtime_err(format!("{}: {e}", out.display())))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("guide: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
