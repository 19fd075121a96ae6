//! Non-learning baselines: a distance-triggered localization switcher and
//! risk-aware A* over a per-cell collision-probability grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::embedding::PatchGrid;
use crate::geometry::{distance, Geometry};
use crate::sim::{Action, AsvSim, LocalizationMode};

/// Distance below which the heuristic switches to exact localization.
pub const HEU_THRESHOLD: f64 = 3.5;
/// Steps between replans of the path follower.
pub const REPLAN_INTERVAL: usize = 25;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("no path satisfies the risk and length bounds")]
    NoSafePath,
    #[error("cell ({0}, {1}) is outside the grid")]
    OutOfGrid(usize, usize),
    #[error("invalid risk grid: {0}")]
    InvalidGrid(String),
    #[error("invalid planner configuration: {0}")]
    InvalidConfig(String),
}

/// Exact iff some listed shape lies within `threshold` of `est_pos`.
pub fn heu_select_mode(est_pos: (f64, f64), geometry: &[Geometry], threshold: f64) -> LocalizationMode {
    let near = geometry.iter().any(|g| g.distance(est_pos) <= threshold);
    if near {
        LocalizationMode::Exact
    } else {
        LocalizationMode::Noisy
    }
}

pub type Cell = (usize, usize);

/// Per-cell probability of a collision while traversing the cell once.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyRiskGrid {
    pub grid: PatchGrid,
    p: Vec<f64>,
}

impl OccupancyRiskGrid {
    pub fn new(grid: PatchGrid, p: Vec<f64>) -> Result<Self, PlanError> {
        if p.len() != grid.len() {
            return Err(PlanError::InvalidGrid(format!("{} probabilities for {} cells", p.len(), grid.len())));
        }
        if let Some(v) = p.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(PlanError::InvalidGrid(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self { grid, p })
    }

    pub fn p(&self, (ix, iy): Cell) -> f64 {
        self.p[self.grid.index(ix, iy)]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    /// Survival cost `-ln(1 - p)` of entering a cell; infinite for `p = 1`.
    pub fn nats(&self, c: Cell) -> f64 {
        -(-self.p(c)).ln_1p()
    }

    /// Risk grid for a vehicle with 1-σ position uncertainty `u`: the Gaussian
    /// tail probability that a vehicle centered in a cell is actually past the
    /// nearest obstacle, shore or avoid boundary. Cells with no clearance are 1.
    pub fn from_sim(sim: &AsvSim, cell_size: f64, u: f64) -> Result<Self, PlanError> {
        let cfg = sim.config();
        let grid = PatchGrid::covering(cfg.width, cfg.height, cell_size)
            .map_err(|e| PlanError::InvalidGrid(e.to_string()))?;
        let sigma = u.max(cfg.sigma_gps);
        let p = grid
            .centers()
            .map(|c| {
                let shore = c.0.min(c.1).min(cfg.width - c.0).min(cfg.height - c.1);
                let obstacle = sim.obstacles().iter().map(|g| g.signed_distance(c)).fold(f64::INFINITY, f64::min);
                let constraint = sim.evaluator().map_or(f64::INFINITY, |e| e.constraint_clearance(c));
                let clearance = shore.min(obstacle).min(constraint + cfg.hull_radius) - cfg.hull_radius;
                if clearance <= 0.0 {
                    1.0
                } else {
                    (0.5 * libm::erfc(clearance / (sigma * std::f64::consts::SQRT_2))).clamp(0.0, 1.0)
                }
            })
            .collect();
        Self::new(grid, p)
    }

    /// 16-bit debug raster, top row first, white = certain collision.
    pub fn to_pgm(&self) -> crate::pgm::Gray {
        let mut data = Vec::with_capacity(self.grid.len());
        for iy in (0..self.grid.ny).rev() {
            for ix in 0..self.grid.nx {
                data.push((self.p((ix, iy)) * 65535.0).round() as u16);
            }
        }
        crate::pgm::Gray { width: self.grid.nx, height: self.grid.ny, maxval: u16::MAX, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RaaConfig {
    /// Largest acceptable total collision probability along a path.
    pub p_max: f64,
    /// Largest number of cells on a path, start and goal included.
    pub horizon: usize,
    /// Meters of detour one nat of survival cost is worth.
    pub kappa: f64,
    /// Cell size of the risk grid built from the simulator.
    pub cell_size: f64,
    /// Label budget guarding against pathological grids.
    pub max_labels: usize,
}

impl Default for RaaConfig {
    fn default() -> Self {
        Self { p_max: 0.01, horizon: 50, kappa: 25.0, cell_size: 2.0, max_labels: 2_000_000 }
    }
}

impl RaaConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if !(self.p_max > 0.0 && self.p_max < 1.0) {
            return Err(PlanError::InvalidConfig("p_max must lie in (0, 1)".into()));
        }
        if self.horizon < 1 {
            return Err(PlanError::InvalidConfig("horizon must be at least 1".into()));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(PlanError::InvalidConfig("kappa must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub path: Vec<Cell>,
    /// Metric length plus `kappa` times the summed survival nats.
    pub cost: f64,
    /// Summed `-ln(1 - p)` over every cell on the path.
    pub nats: f64,
}

impl Plan {
    /// Probability of at least one collision along the path.
    pub fn risk(&self) -> f64 {
        -(-self.nats).exp_m1()
    }
}

/// Summed survival nats over the cells of `path`, in path order.
pub fn path_nats(risk: &OccupancyRiskGrid, path: &[Cell]) -> f64 {
    path.iter().fold(0.0, |acc, c| acc + risk.nats(*c))
}

/// Cost `raa_plan` assigns to `path`.
pub fn path_cost(risk: &OccupancyRiskGrid, path: &[Cell], kappa: f64) -> f64 {
    let s = risk.grid.cell_size;
    let mut cost = kappa * risk.nats(path[0]);
    for w in path.windows(2) {
        cost += step_len(w[0], w[1], s) + kappa * risk.nats(w[1]);
    }
    cost
}

fn step_len(a: Cell, b: Cell, s: f64) -> f64 {
    if a.0 != b.0 && a.1 != b.1 {
        s * std::f64::consts::SQRT_2
    } else {
        s
    }
}

fn octile(a: Cell, b: Cell, s: f64) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    s * (dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy))
}

fn feasible(nats: f64, p_max: f64) -> bool {
    -(-nats).exp_m1() <= p_max
}

#[derive(Debug, Clone)]
struct Label {
    cell: Cell,
    cost: f64,
    nats: f64,
    len: usize,
    parent: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueKey {
    f: f64,
    nats: f64,
    cell: Cell,
    label: usize,
}

impl Eq for QueueKey {}

impl Ord for QueueKey {
    // Reversed so the max-heap pops the smallest key.
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f)
            .then(o.nats.total_cmp(&self.nats))
            .then((o.cell.1, o.cell.0).cmp(&(self.cell.1, self.cell.0)))
            .then(o.label.cmp(&self.label))
    }
}

impl PartialOrd for QueueKey {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

struct Search {
    labels: Vec<Label>,
    goal: Option<usize>,
    /// Settled label closest to the goal, for partial plans.
    closest: Option<usize>,
}

fn neighbors(grid: &PatchGrid, (x, y): Cell) -> impl Iterator<Item = Cell> + '_ {
    const D: [(i64, i64); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];
    D.iter().filter_map(move |(dx, dy)| {
        let nx = x as i64 + dx;
        let ny = y as i64 + dy;
        (nx >= 0 && ny >= 0 && (nx as usize) < grid.nx && (ny as usize) < grid.ny).then_some((nx as usize, ny as usize))
    })
}

/// Resource-constrained label-setting A*: labels carry (cost, nats, length)
/// and are pruned by Pareto dominance per cell, so the first goal label
/// popped is the cheapest path meeting both the risk and the length bound.
fn search(risk: &OccupancyRiskGrid, start: Cell, goal: Cell, cfg: &RaaConfig) -> Search {
    let grid = risk.grid;
    let s = grid.cell_size;
    let mut out = Search { labels: Vec::new(), goal: None, closest: None };
    let nats0 = risk.nats(start);
    if !feasible(nats0, cfg.p_max) || cfg.horizon < 1 {
        return out;
    }
    let mut front: Vec<Vec<usize>> = vec![Vec::new(); grid.len()];
    let mut heap = BinaryHeap::new();
    out.labels.push(Label { cell: start, cost: cfg.kappa * nats0, nats: nats0, len: 1, parent: None });
    front[grid.index(start.0, start.1)].push(0);
    heap.push(QueueKey { f: cfg.kappa * nats0 + octile(start, goal, s), nats: nats0, cell: start, label: 0 });
    let mut closest_key = (f64::INFINITY, f64::INFINITY);
    while let Some(k) = heap.pop() {
        let lab = out.labels[k.label].clone();
        let fi = grid.index(lab.cell.0, lab.cell.1);
        if !front[fi].contains(&k.label) {
            continue;
        }
        let h = octile(lab.cell, goal, s);
        if (h, lab.cost) < closest_key {
            closest_key = (h, lab.cost);
            out.closest = Some(k.label);
        }
        if lab.cell == goal {
            out.goal = Some(k.label);
            return out;
        }
        if lab.len >= cfg.horizon || out.labels.len() >= cfg.max_labels {
            continue;
        }
        for nb in neighbors(&grid, lab.cell) {
            let n_nats = lab.nats + risk.nats(nb);
            if !feasible(n_nats, cfg.p_max) {
                continue;
            }
            let cost = lab.cost + step_len(lab.cell, nb, s) + cfg.kappa * risk.nats(nb);
            let len = lab.len + 1;
            let ni = grid.index(nb.0, nb.1);
            let labels = &out.labels;
            let dominated = front[ni].iter().any(|&j| {
                let o = &labels[j];
                o.cost <= cost && o.nats <= n_nats && o.len <= len
            });
            if dominated {
                continue;
            }
            front[ni].retain(|&j| {
                let o = &labels[j];
                !(cost <= o.cost && n_nats <= o.nats && len <= o.len)
            });
            let id = out.labels.len();
            out.labels.push(Label { cell: nb, cost, nats: n_nats, len, parent: Some(k.label) });
            front[ni].push(id);
            heap.push(QueueKey { f: cost + octile(nb, goal, s), nats: n_nats, cell: nb, label: id });
        }
    }
    out
}

fn unwind(labels: &[Label], mut i: usize) -> Plan {
    let (cost, nats) = (labels[i].cost, labels[i].nats);
    let mut path = vec![labels[i].cell];
    while let Some(p) = labels[i].parent {
        i = p;
        path.push(labels[i].cell);
    }
    path.reverse();
    Plan { path, cost, nats }
}

fn check_cells(risk: &OccupancyRiskGrid, cells: &[Cell]) -> Result<(), PlanError> {
    for &(x, y) in cells {
        if x >= risk.grid.nx || y >= risk.grid.ny {
            return Err(PlanError::OutOfGrid(x, y));
        }
    }
    Ok(())
}

/// Cheapest 8-connected path from `start` to `goal` whose total collision
/// probability is at most `p_max` and which has at most `horizon` cells.
pub fn raa_plan(risk: &OccupancyRiskGrid, start: Cell, goal: Cell, cfg: &RaaConfig) -> Result<Plan, PlanError> {
    cfg.validate()?;
    check_cells(risk, &[start, goal])?;
    let s = search(risk, start, goal, cfg);
    s.goal.map(|g| unwind(&s.labels, g)).ok_or(PlanError::NoSafePath)
}

/// Like [`raa_plan`], but when the goal is out of reach returns the feasible
/// path ending closest to it.
pub fn raa_plan_toward(risk: &OccupancyRiskGrid, start: Cell, goal: Cell, cfg: &RaaConfig) -> Result<Plan, PlanError> {
    cfg.validate()?;
    check_cells(risk, &[start, goal])?;
    let s = search(risk, start, goal, cfg);
    s.goal.or(s.closest).map(|g| unwind(&s.labels, g)).ok_or(PlanError::NoSafePath)
}

/// Waypoint chaser over a cell path: full thrust toward the next cell center.
#[derive(Debug, Clone)]
pub struct PathFollower {
    grid: PatchGrid,
    waypoints: Vec<(f64, f64)>,
    next: usize,
}

impl PathFollower {
    /// The first cell is where the vehicle already is, so it is skipped.
    pub fn new(grid: PatchGrid, path: &[Cell]) -> Self {
        let waypoints = path.iter().skip(1).map(|&(x, y)| grid.center(x, y)).collect();
        Self { grid, waypoints, next: 0 }
    }

    pub fn is_finished(&self) -> bool {
        self.next >= self.waypoints.len()
    }

    /// Heading and thrust toward the next waypoint from `pos`, advancing past
    /// waypoints already within half a cell. `None` once the path is used up.
    pub fn steer(&mut self, pos: (f64, f64), lambda_max: f64) -> Option<(f64, f64)> {
        while self.next < self.waypoints.len() && distance(pos, self.waypoints[self.next]) < 0.5 * self.grid.cell_size {
            self.next += 1;
        }
        let w = *self.waypoints.get(self.next)?;
        Some((lambda_max, bearing(pos, w)))
    }
}

/// Heading from `a` to `b` in [0, 2π).
pub fn bearing(a: (f64, f64), b: (f64, f64)) -> f64 {
    let t = (b.1 - a.1).atan2(b.0 - a.0).rem_euclid(std::f64::consts::TAU);
    if t >= std::f64::consts::TAU {
        0.0
    } else {
        t
    }
}

/// Action stream for following `path` from `start` by dead reckoning the
/// commanded motion, with modes picked by the 3.5 m rule.
pub fn raa_follow(
    path: &[Cell],
    grid: PatchGrid,
    start: (f64, f64),
    geometry: &[Geometry],
    step_len: f64,
    lambda_max: f64,
) -> Vec<Action> {
    let mut f = PathFollower::new(grid, path);
    let mut pos = start;
    let mut out = Vec::new();
    let cap = 4 * path.len() * ((grid.cell_size / step_len.max(1e-9)).ceil() as usize + 1);
    while let Some((lambda, alpha)) = f.steer(pos, lambda_max) {
        if out.len() >= cap {
            break;
        }
        let eta = heu_select_mode(pos, geometry, HEU_THRESHOLD);
        out.push(Action { lambda, alpha, eta });
        pos = (pos.0 + step_len * alpha.cos(), pos.1 + step_len * alpha.sin());
    }
    out
}

/// How a path-following baseline picks the localization mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Planner {
    /// Risk-free A* path, exact fixes within 3.5 m of anything critical.
    Heu,
    /// Risk-aware A* path recomputed from the current uncertainty.
    Raa,
}

/// Closed-loop baseline driving an [`AsvSim`]: plans from the estimated cell
/// to the active target, replanning every [`REPLAN_INTERVAL`] steps or when
/// the path runs out.
#[derive(Debug, Clone)]
pub struct PlannerController {
    kind: Planner,
    cfg: RaaConfig,
    follower: Option<PathFollower>,
    since_plan: usize,
    target: Option<(f64, f64)>,
    /// Start cell of the most recent plan.
    pub last_plan_start: Option<Cell>,
}

impl PlannerController {
    pub fn new(kind: Planner, cfg: RaaConfig) -> Self {
        Self { kind, cfg, follower: None, since_plan: 0, target: None, last_plan_start: None }
    }

    pub fn reset(&mut self) {
        self.follower = None;
        self.since_plan = 0;
        self.target = None;
        self.last_plan_start = None;
    }

    fn plan(&mut self, sim: &AsvSim, pos: (f64, f64), target: (f64, f64), u: f64) -> Option<PathFollower> {
        // The heuristic plans on a near-certain grid: it only avoids hard
        // obstacles and relies on exact fixes for precision.
        let sigma = match self.kind {
            Planner::Heu => sim.config().sigma_gps,
            Planner::Raa => u,
        };
        let risk = OccupancyRiskGrid::from_sim(sim, self.cfg.cell_size, sigma).ok()?;
        let start = risk.grid.clamped_cell(pos);
        let goal = risk.grid.clamped_cell(target);
        self.last_plan_start = Some(start);
        let plan = raa_plan_toward(&risk, start, goal, &self.cfg).ok()?;
        Some(PathFollower::new(risk.grid, &plan.path))
    }

    pub fn act(&mut self, sim: &AsvSim) -> Action {
        let lambda_max = sim.config().lambda_max;
        let (Some(est), Some(target)) = (sim.estimate(), sim.active_target()) else {
            return Action { lambda: 0.0, alpha: 0.0, eta: LocalizationMode::Noisy };
        };
        let pos = (est.x, est.y);
        let eta = heu_select_mode(pos, &sim.critical_geometry(), HEU_THRESHOLD);
        let target_moved = self.target.is_none_or(|t| distance(t, target) > self.cfg.cell_size);
        let stale = self.since_plan >= REPLAN_INTERVAL || self.follower.as_ref().is_none_or(PathFollower::is_finished);
        if target_moved || stale {
            self.follower = self.plan(sim, pos, target, est.u);
            self.since_plan = 0;
            self.target = Some(target);
        }
        self.since_plan += 1;
        let steer = self.follower.as_mut().and_then(|f| f.steer(pos, lambda_max));
        let (lambda, alpha) = steer.unwrap_or((lambda_max, bearing(pos, target)));
        Action { lambda, alpha, eta }
    }
}
