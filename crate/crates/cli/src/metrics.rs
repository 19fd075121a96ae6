//! Per-episode logs, task completion rate and result tables.

use std::io::{Read, Write};
use std::path::Path;

use guide_learn::EpisodeMetrics;
use serde::{Deserialize, Serialize};

use crate::config::{Algo, CATEGORIES};
use crate::HarnessError;

/// One evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub episode: usize,
    pub env_seed: u64,
    pub steps: usize,
    pub completed_fraction: f64,
    pub reward: f64,
    pub exact_fixes: usize,
    pub collision: bool,
    pub violation: bool,
    pub complete: bool,
}

/// Training metrics as written to `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: usize,
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    pub tcr: f64,
    pub alpha: f64,
    pub q_loss: f64,
    pub policy_loss: f64,
    pub exact_fix_count: usize,
}

impl From<&EpisodeMetrics> for TrainRow {
    fn from(m: &EpisodeMetrics) -> Self {
        Self {
            step: m.step,
            episode: m.episode,
            ret: m.ret,
            tcr: m.tcr,
            alpha: m.alpha,
            q_loss: m.q_loss,
            policy_loss: m.policy_loss,
            exact_fix_count: m.exact_fix_count,
        }
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task_category: String,
    pub algo: Algo,
    pub tcr_percent: f64,
    pub avg_reward: f64,
    pub avg_exact_fixes: f64,
    pub n_episodes: usize,
    /// Population standard deviation of the per-seed completion rates.
    pub seed_spread: f64,
}

/// Mean completed fraction, in percent.
pub fn compute_tcr(logs: &[EpisodeLog]) -> Result<f64, HarnessError> {
    if logs.is_empty() {
        return Err(HarnessError::EmptyLogs);
    }
    Ok(100.0 * mean(logs.iter().map(|l| l.completed_fraction)))
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    values.sum::<f64>() / n as f64
}

/// Completion rate of each seed, in order of first appearance.
pub fn per_seed_tcr(logs: &[EpisodeLog]) -> Vec<(u64, f64)> {
    let mut seeds: Vec<u64> = Vec::new();
    for l in logs {
        if !seeds.contains(&l.seed) {
            seeds.push(l.seed);
        }
    }
    seeds
        .into_iter()
        .map(|s| {
            let own: Vec<f64> = logs.iter().filter(|l| l.seed == s).map(|l| l.completed_fraction).collect();
            (s, 100.0 * mean(own.into_iter()))
        })
        .collect()
}

impl ResultRow {
    pub fn from_logs(task_category: &str, algo: Algo, logs: &[EpisodeLog]) -> Result<Self, HarnessError> {
        let tcr_percent = compute_tcr(logs)?;
        let seeds: Vec<f64> = per_seed_tcr(logs).into_iter().map(|(_, t)| t).collect();
        let m = mean(seeds.iter().copied());
        let seed_spread = (mean(seeds.iter().map(|t| (t - m).powi(2)))).sqrt();
        Ok(Self {
            task_category: task_category.into(),
            algo,
            tcr_percent,
            avg_reward: mean(logs.iter().map(|l| l.reward)),
            avg_exact_fixes: mean(logs.iter().map(|l| l.exact_fixes as f64)),
            n_episodes: logs.len(),
            seed_spread,
        })
    }
}

fn csv_err(what: &str) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Runtime(format!("{what}: {e}"))
}

/// Serialize rows as CSV with a header line.
pub fn write_csv<T: Serialize>(out: impl Write, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err("csv"))?;
    }
    w.flush().map_err(|e| HarnessError::Runtime(format!("csv: {e}")))
}

/// CSV text with the header even when there are no rows.
pub fn csv_string<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String, HarnessError> {
    if rows.is_empty() {
        return Ok(format!("{}\n", header.join(",")));
    }
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| HarnessError::Runtime(e.to_string()))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(input: impl Read) -> Result<Vec<T>, HarnessError> {
    csv::Reader::from_reader(input).deserialize().collect::<Result<_, _>>().map_err(csv_err("csv"))
}

pub fn write_csv_file<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), HarnessError> {
    let text = csv_string(rows, header)?;
    std::fs::write(path, text).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

pub fn read_csv_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let f = std::fs::File::open(path).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    read_csv(f).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))
}

pub const TRAIN_HEADER: [&str; 8] = ["step", "episode", "return", "tcr", "alpha", "q_loss", "policy_loss", "exact_fix_count"];
pub const EPISODE_HEADER: [&str; 10] =
    ["seed", "episode", "env_seed", "steps", "completed_fraction", "reward", "exact_fixes", "collision", "violation", "complete"];
pub const STEP_HEADER: [&str; 9] = ["step", "true_x", "true_y", "est_x", "est_y", "u", "eta", "reward", "events"];
pub const RESULT_HEADER: [&str; 7] =
    ["task_category", "algo", "tcr_percent", "avg_reward", "avg_exact_fixes", "n_episodes", "seed_spread"];

/// The results table in its fixed layout: one TCR line and one reward line
/// per category, one column per algorithm. Cells without a result read `-`.
pub fn table_layout(rows: &[ResultRow]) -> String {
    let mut categories: Vec<&str> = CATEGORIES.iter().map(|(c, _)| *c).collect();
    for r in rows {
        if !categories.contains(&r.task_category.as_str()) {
            categories.push(&r.task_category);
        }
    }
    let mut out = String::from("task_category,metric");
    for a in Algo::ALL {
        out.push(',');
        out.push_str(a.as_str());
    }
    out.push('\n');
    for c in categories {
        for (metric, pick) in [("tcr_percent", 0), ("avg_reward", 1)] {
            out.push_str(&format!("{c},{metric}"));
            for a in Algo::ALL {
                let cell = rows.iter().find(|r| r.task_category == c && r.algo == a);
                out.push(',');
                match cell {
                    Some(r) => out.push_str(&format!("{:.1}", if pick == 0 { r.tcr_percent } else { r.avg_reward })),
                    None => out.push('-'),
                }
            }
            out.push('\n');
        }
    }
    out
}
