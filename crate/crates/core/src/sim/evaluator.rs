//! Task completion bookkeeping, evaluated on the true vehicle position.

use crate::geometry::{distance, Geometry};
use crate::sim::SimConfig;
use crate::task::{Constraint, Subtask, TaskSpec};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone)]
enum Objective {
    Goal { point: (f64, f64) },
    Perimeter { samples: Vec<(f64, f64)>, covered: Vec<bool>, n_covered: usize, needed: usize },
    Explore { region: Geometry, cells: Vec<(f64, f64)>, covered: Vec<bool>, n_covered: usize, needed: usize },
}

#[derive(Debug, Clone)]
enum Rule {
    KeepAway { geom: Geometry, min_dist: f64 },
    StayInside { geom: Geometry },
}

impl Rule {
    fn violated(&self, p: (f64, f64)) -> bool {
        match self {
            Rule::KeepAway { geom, min_dist } => geom.distance(p) < *min_dist,
            Rule::StayInside { geom } => !geom.contains(p),
        }
    }

    fn clearance(&self, p: (f64, f64)) -> f64 {
        match self {
            Rule::KeepAway { geom, min_dist } => geom.distance(p) - min_dist,
            Rule::StayInside { geom } => -geom.signed_distance(p),
        }
    }
}

/// What changed in one evaluator update.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalEvent {
    pub subtask_completed: bool,
    pub task_completed: bool,
    pub violation: bool,
}

/// Point a vehicle should reach to "visit" a landmark: the center of a
/// rectangle, or a standoff point on the side of a disc facing `from`.
pub fn approach_point(geom: &Geometry, from: (f64, f64), standoff: f64) -> (f64, f64) {
    match *geom {
        Geometry::Rect { .. } => geom.center(),
        Geometry::Disc { cx, cy, r } => {
            let (dx, dy) = (from.0 - cx, from.1 - cy);
            let n = dx.hypot(dy);
            let (ux, uy) = if n > 1e-9 { (dx / n, dy / n) } else { (1.0, 0.0) };
            (cx + (r + standoff) * ux, cy + (r + standoff) * uy)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskEvaluator {
    objectives: Vec<Objective>,
    rules: Vec<Rule>,
    active: usize,
    violated: bool,
    frozen: Option<f64>,
    goal_radius: f64,
    corridor: f64,
    spacing: f64,
}

impl TaskEvaluator {
    pub fn new(spec: &TaskSpec, vocab: &Vocabulary, cfg: &SimConfig, start: (f64, f64)) -> Result<Self, String> {
        let geom = |name: &str| -> Result<Geometry, String> {
            vocab.get(name).map(|p| p.geometry).ok_or_else(|| format!("unknown place '{name}'"))
        };
        let spacing = cfg.coverage_spacing;
        let mut objectives = Vec::with_capacity(spec.primaries.len());
        for s in &spec.primaries {
            let obj = match s {
                Subtask::GoalWaypoint { x, y } => {
                    if !(*x >= 0.0 && *x <= cfg.width && *y >= 0.0 && *y <= cfg.height) {
                        return Err(format!("waypoint ({x}, {y}) lies outside the arena"));
                    }
                    Objective::Goal { point: (*x, *y) }
                }
                Subtask::GoalLandmark(n) | Subtask::ReturnTo(n) => {
                    let g = geom(n)?;
                    Objective::Goal { point: approach_point(&g, start, cfg.hull_radius + cfg.approach_standoff) }
                }
                Subtask::Perimeter(n) => {
                    let g = geom(n)?;
                    let offset = match g {
                        Geometry::Disc { .. } => cfg.perimeter_standoff,
                        Geometry::Rect { .. } => -cfg.perimeter_standoff,
                    };
                    let samples = g.offset_loop(offset, spacing);
                    let needed = ((samples.len() as f64) * cfg.perimeter_fraction).ceil().max(1.0) as usize;
                    Objective::Perimeter { covered: vec![false; samples.len()], samples, n_covered: 0, needed }
                }
                Subtask::Explore(n) => {
                    let g = geom(n)?;
                    let cells = region_cells(&g, spacing);
                    if cells.is_empty() {
                        return Err(format!("region '{n}' is too small to explore"));
                    }
                    let needed = ((cells.len() as f64) * cfg.explore_fraction).ceil().max(1.0) as usize;
                    Objective::Explore { region: g, covered: vec![false; cells.len()], cells, n_covered: 0, needed }
                }
            };
            objectives.push(obj);
        }
        let mut rules = Vec::new();
        for c in &spec.auxiliaries {
            rules.push(match c {
                Constraint::AvoidLandmark { name, min_dist } => Rule::KeepAway { geom: geom(name)?, min_dist: *min_dist },
                Constraint::AvoidRegion(name) => Rule::KeepAway { geom: geom(name)?, min_dist: cfg.avoid_distance },
                Constraint::StayWithin(name) => Rule::StayInside { geom: geom(name)? },
                Constraint::AvoidPoint { x, y, min_dist } => Rule::KeepAway {
                    geom: Geometry::Disc { cx: *x, cy: *y, r: f64::MIN_POSITIVE },
                    min_dist: *min_dist,
                },
            });
        }
        if let Some(r) = rules.iter().find(|r| r.violated(start)) {
            return Err(format!("start position already violates a constraint ({r:?})"));
        }
        Ok(Self {
            objectives,
            rules,
            active: 0,
            violated: false,
            frozen: None,
            goal_radius: cfg.goal_radius,
            corridor: cfg.corridor,
            spacing,
        })
    }

    pub fn n_subtasks(&self) -> usize {
        self.objectives.len()
    }

    pub fn active(&self) -> Option<usize> {
        (self.active < self.objectives.len() && !self.violated).then_some(self.active)
    }

    pub fn is_complete(&self) -> bool {
        self.active >= self.objectives.len() && !self.violated
    }

    pub fn violated(&self) -> bool {
        self.violated
    }

    pub fn subtask_done(&self, i: usize) -> bool {
        i < self.active
    }

    fn partial(&self, i: usize) -> f64 {
        match &self.objectives[i] {
            Objective::Goal { .. } => 0.0,
            Objective::Perimeter { n_covered, needed, .. } | Objective::Explore { n_covered, needed, .. } => {
                (*n_covered as f64 / *needed as f64).min(1.0)
            }
        }
    }

    /// Completed primaries over their count, with partial credit for the active one.
    pub fn completed_fraction(&self) -> f64 {
        if let Some(f) = self.frozen {
            return f;
        }
        let m = self.objectives.len();
        if m == 0 {
            return 1.0;
        }
        let done = self.active.min(m) as f64;
        let partial = if self.active < m { self.partial(self.active) } else { 0.0 };
        ((done + partial) / m as f64).min(1.0)
    }

    /// Smallest constraint clearance at `p`; infinite without constraints.
    pub fn constraint_clearance(&self, p: (f64, f64)) -> f64 {
        self.rules.iter().map(|r| r.clearance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Geometry of everything the task flags as critical: avoid areas and goal points.
    pub fn critical_geometry(&self) -> Vec<Geometry> {
        let mut out: Vec<Geometry> = self
            .rules
            .iter()
            .filter_map(|r| match r {
                Rule::KeepAway { geom, .. } => Some(*geom),
                Rule::StayInside { .. } => None,
            })
            .collect();
        if let Some(i) = self.active() {
            if let Objective::Goal { point } = self.objectives[i] {
                out.push(Geometry::Disc { cx: point.0, cy: point.1, r: f64::MIN_POSITIVE });
            }
        }
        out
    }

    /// Potential whose increase is paid out as progress reward for subtask `i`.
    pub fn potential(&self, i: usize, p: (f64, f64)) -> f64 {
        match &self.objectives[i] {
            Objective::Goal { point } => -distance(p, *point),
            Objective::Perimeter { samples, n_covered, .. } => {
                let d = samples.iter().map(|s| distance(p, *s)).fold(f64::INFINITY, f64::min);
                *n_covered as f64 * self.spacing - (d - self.corridor).max(0.0)
            }
            Objective::Explore { region, n_covered, .. } => {
                0.2 * *n_covered as f64 * self.spacing - region.distance(p)
            }
        }
    }

    /// Where subtask `i` wants the vehicle to go next, seen from `p`.
    pub fn target_point(&self, i: usize, p: (f64, f64)) -> (f64, f64) {
        let nearest = |pts: &[(f64, f64)], covered: &[bool]| {
            pts.iter()
                .zip(covered)
                .filter(|(_, c)| !**c)
                .map(|(q, _)| *q)
                .min_by(|a, b| distance(p, *a).total_cmp(&distance(p, *b)))
                .unwrap_or(p)
        };
        match &self.objectives[i] {
            Objective::Goal { point } => *point,
            Objective::Perimeter { samples, covered, .. } => nearest(samples, covered),
            Objective::Explore { cells, covered, .. } => nearest(cells, covered),
        }
    }

    /// Advance bookkeeping with the vehicle at true position `p`.
    pub fn update(&mut self, p: (f64, f64)) -> EvalEvent {
        let mut ev = EvalEvent::default();
        if self.violated || self.active >= self.objectives.len() {
            return ev;
        }
        if self.rules.iter().any(|r| r.violated(p)) {
            self.frozen = Some(self.completed_fraction());
            self.violated = true;
            ev.violation = true;
            return ev;
        }
        let (goal_radius, corridor) = (self.goal_radius, self.corridor);
        let done = match &mut self.objectives[self.active] {
            Objective::Goal { point } => distance(p, *point) <= goal_radius,
            Objective::Perimeter { samples, covered, n_covered, needed } => {
                for (s, c) in samples.iter().zip(covered.iter_mut()) {
                    if !*c && distance(p, *s) <= corridor {
                        *c = true;
                        *n_covered += 1;
                    }
                }
                *n_covered >= *needed
            }
            Objective::Explore { region, cells, covered, n_covered, needed } => {
                if region.contains(p) {
                    for (q, c) in cells.iter().zip(covered.iter_mut()) {
                        if !*c && distance(p, *q) <= corridor {
                            *c = true;
                            *n_covered += 1;
                        }
                    }
                }
                *n_covered >= *needed
            }
        };
        if done {
            self.active += 1;
            ev.subtask_completed = true;
            ev.task_completed = self.active == self.objectives.len();
        }
        ev
    }
}

fn region_cells(g: &Geometry, spacing: f64) -> Vec<(f64, f64)> {
    let (x0, y0, x1, y1) = match *g {
        Geometry::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
        Geometry::Disc { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
    };
    let nx = ((x1 - x0) / spacing).floor() as usize;
    let ny = ((y1 - y0) / spacing).floor() as usize;
    let mut cells = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let c = (x0 + (ix as f64 + 0.5) * spacing, y0 + (iy as f64 + 0.5) * spacing);
            if g.contains(c) {
                cells.push(c);
            }
        }
    }
    cells
}
