//! Task-specific uncertainty maps.
//!
//! The raw map is a weighted sum of three per-cell fields: task relevance Φ
//! (attention-pooled cosine similarity of each subtask against the cell's
//! patch), constraint relevance C (same pooling over constraints) and a
//! linear model E of auxiliary environment features. The raw value measures
//! how critical a cell is; the acceptable uncertainty is its antitone
//! min-max remap into `[u_min, u_max]` meters.

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingError, EmbeddingTable, PatchGrid};
use crate::geometry::distance;
use crate::pgm::Gray;
use crate::linalg::{cholesky_solve, normal_equations, qr_lstsq};
use crate::task::TaskSpec;
use crate::vocab::Vocabulary;

pub const DEFAULT_U_MIN: f64 = 0.1;
pub const DEFAULT_U_MAX: f64 = 2.0;
const RIDGE: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum TsumError {
    #[error("no embedding for key '{0}'")]
    MissingKey(String),
    #[error("feature dimension mismatch: model has {model}, map has {map}")]
    DimensionMismatch { model: usize, map: usize },
    #[error("fields are defined on different grids")]
    GridMismatch,
    #[error("degenerate system (rank {rank} of {needed})")]
    DegenerateSystem { rank: usize, needed: usize },
    #[error("invalid range: u_min {0} must be below u_max {1}")]
    BadRange(f64, f64),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentWeights {
    pub w_phi: f64,
    pub w_c: f64,
    pub w_e: f64,
}

impl Default for ComponentWeights {
    fn default() -> Self {
        Self { w_phi: 0.5, w_c: 0.3, w_e: 0.2 }
    }
}

/// One scalar per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: PatchGrid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn constant(grid: PatchGrid, v: f64) -> Self {
        Self { grid, values: vec![v; grid.len()] }
    }

    pub fn from_fn(grid: PatchGrid, f: impl Fn((f64, f64)) -> f64) -> Self {
        Self { grid, values: grid.centers().map(f).collect() }
    }
}

/// Softmax over one cell's similarities, max-shifted.
pub fn attention_weights(sims: &[f64]) -> Vec<f64> {
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Attention-weighted mean of `sims`; zero for an empty list.
pub fn attention_pool(sims: &[f64]) -> f64 {
    if sims.is_empty() {
        return 0.0;
    }
    attention_weights(sims).iter().zip(sims).map(|(a, s)| a * s).sum()
}

fn pooled_field(keys: &[String], table: &EmbeddingTable) -> Result<Field, TsumError> {
    let grid = *table.grid();
    let texts = keys
        .iter()
        .map(|k| table.text(k).ok_or_else(|| TsumError::MissingKey(k.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut values = Vec::with_capacity(grid.len());
    let mut sims = vec![0.0; texts.len()];
    for patch in table.patches() {
        for (s, t) in sims.iter_mut().zip(&texts) {
            *s = cosine(t, patch)?;
        }
        values.push(attention_pool(&sims));
    }
    Ok(Field { grid, values })
}

/// Task relevance Φ over the table's grid.
pub fn relevance_field(spec: &TaskSpec, table: &EmbeddingTable) -> Result<Field, TsumError> {
    let keys: Vec<String> = spec.primaries.iter().map(|s| s.canonical_text()).collect();
    pooled_field(&keys, table)
}

/// Constraint relevance C; identically zero when the task has no constraints.
pub fn constraint_field(spec: &TaskSpec, table: &EmbeddingTable) -> Result<Field, TsumError> {
    let keys: Vec<String> = spec.auxiliaries.iter().map(|c| c.canonical_text()).collect();
    pooled_field(&keys, table)
}

/// Per-cell auxiliary features that imagery does not show.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvFeatureMap {
    pub grid: PatchGrid,
    pub p: usize,
    /// Row-major, `p` values per cell.
    pub features: Vec<f64>,
}

impl EnvFeatureMap {
    pub fn new(grid: PatchGrid, p: usize, features: Vec<f64>) -> Result<Self, TsumError> {
        if p == 0 || features.len() != grid.len() * p {
            return Err(TsumError::DimensionMismatch { model: p, map: features.len() / grid.len().max(1) });
        }
        Ok(Self { grid, p, features })
    }

    pub fn cell(&self, j: usize) -> &[f64] {
        &self.features[j * self.p..(j + 1) * self.p]
    }

    /// Depth (m), obstacle proximity (1/m) and disturbance intensity for a lake.
    /// Depth is a bowl, 10 m at the center and 2 m at the shore.
    pub fn synthetic(vocab: &Vocabulary, grid: PatchGrid) -> Self {
        let (x0, y0, x1, y1) = grid.extent();
        let center = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
        let radius = 0.5 * (x1 - x0).hypot(y1 - y0);
        let mut features = Vec::with_capacity(grid.len() * 3);
        for c in grid.centers() {
            let r = distance(c, center) / radius;
            let depth = 2.0 + 8.0 * (1.0 - r * r).max(0.0);
            let clearance = vocab
                .obstacles()
                .map(|o| o.geometry.distance(c))
                .fold(f64::INFINITY, f64::min);
            let proximity = if clearance.is_finite() { 1.0 / (clearance + 1.0) } else { 0.0 };
            let disturbance = vocab
                .obstacles()
                .filter_map(|o| o.disturbance_radius.map(|rad| (o.geometry.center(), rad)))
                .map(|(oc, rad)| (1.0 - distance(c, oc) / rad).max(0.0))
                .fold(0.0, f64::max);
            features.extend_from_slice(&[depth, proximity, disturbance]);
        }
        Self { grid, p: 3, features }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvLinearModel {
    pub w_env: Vec<f64>,
    pub b_env: f64,
}

impl EnvLinearModel {
    /// Hand-set model for [`EnvFeatureMap::synthetic`]: shallow water, nearby
    /// obstacles and disturbed water all raise criticality.
    pub fn lake_default() -> Self {
        Self { w_env: vec![-0.05, 1.0, 1.0], b_env: 0.5 }
    }
}

/// Environmental factor E(j) = wᵀ f(j) + b.
pub fn env_field(fmap: &EnvFeatureMap, model: &EnvLinearModel) -> Result<Field, TsumError> {
    if model.w_env.len() != fmap.p {
        return Err(TsumError::DimensionMismatch { model: model.w_env.len(), map: fmap.p });
    }
    let values = (0..fmap.grid.len())
        .map(|j| fmap.cell(j).iter().zip(&model.w_env).map(|(f, w)| f * w).sum::<f64>() + model.b_env)
        .collect();
    Ok(Field { grid: fmap.grid, values })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tsum {
    pub grid: PatchGrid,
    pub raw: Vec<f64>,
    pub acceptable: Vec<f64>,
    pub weights: ComponentWeights,
    pub u_min: f64,
    pub u_max: f64,
}

fn check_grids(fields: &[&Field]) -> Result<PatchGrid, TsumError> {
    let grid = fields[0].grid;
    if fields.iter().any(|f| f.grid != grid || f.values.len() != grid.len()) {
        return Err(TsumError::GridMismatch);
    }
    Ok(grid)
}

/// Raw map only: w_Φ Φ + w_C C + w_E E per cell.
pub fn raw_map(phi: &Field, c: &Field, e: &Field, w: &ComponentWeights) -> Result<Vec<f64>, TsumError> {
    check_grids(&[phi, c, e])?;
    Ok((0..phi.values.len())
        .map(|j| w.w_phi * phi.values[j] + w.w_c * c.values[j] + w.w_e * e.values[j])
        .collect())
}

pub fn aggregate(
    phi: &Field,
    c: &Field,
    e: &Field,
    weights: ComponentWeights,
    u_min: f64,
    u_max: f64,
) -> Result<Tsum, TsumError> {
    if !(u_min.is_finite() && u_max.is_finite() && u_min < u_max) {
        return Err(TsumError::BadRange(u_min, u_max));
    }
    let grid = check_grids(&[phi, c, e])?;
    let raw = raw_map(phi, c, e, &weights)?;
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let constant = !(span > 1e-12 * hi.abs().max(lo.abs()).max(1.0));
    let acceptable = raw
        .iter()
        .map(|&r| {
            if constant {
                return 0.5 * (u_min + u_max);
            }
            // Pin the extremes so the most and least critical cells hit the
            // range ends exactly.
            if r == hi {
                return u_min;
            }
            if r == lo {
                return u_max;
            }
            (u_max - (u_max - u_min) * ((r - lo) / span)).clamp(u_min, u_max)
        })
        .collect();
    Ok(Tsum { grid, raw, acceptable, weights, u_min, u_max })
}

impl Tsum {
    /// Acceptable uncertainty at `pos`, nearest cell, clamped to the grid.
    pub fn sample(&self, pos: (f64, f64)) -> f64 {
        let (ix, iy) = self.grid.clamped_cell(pos);
        self.acceptable[self.grid.index(ix, iy)]
    }

    /// 16-bit raster of the acceptable field, top row first: black is
    /// `u_min`, white is `u_max`.
    pub fn to_pgm(&self) -> Gray {
        let mut data = Vec::with_capacity(self.grid.len());
        for iy in (0..self.grid.ny).rev() {
            for ix in 0..self.grid.nx {
                let a = self.acceptable[self.grid.index(ix, iy)];
                let t = (a - self.u_min) / (self.u_max - self.u_min);
                data.push((t * 65535.0).round().clamp(0.0, 65535.0) as u16);
            }
        }
        Gray { width: self.grid.nx, height: self.grid.ny, maxval: u16::MAX, data }
    }

    pub fn sidecar(&self) -> TsumSidecar {
        TsumSidecar { u_min: self.u_min, u_max: self.u_max, grid: self.grid }
    }
}

/// Metadata written next to a TSUM raster so the meters can be recovered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsumSidecar {
    pub u_min: f64,
    pub u_max: f64,
    pub grid: PatchGrid,
}

impl TsumSidecar {
    /// Acceptable uncertainty in meters for every cell of `img` (flat index
    /// `iy * nx + ix`, bottom row first like the grid).
    pub fn decode(&self, img: &Gray) -> Result<Vec<f64>, TsumError> {
        if img.width != self.grid.nx || img.height != self.grid.ny {
            return Err(TsumError::GridMismatch);
        }
        let mut out = vec![0.0; self.grid.len()];
        for iy in 0..self.grid.ny {
            for ix in 0..self.grid.nx {
                let t = img.level(ix, self.grid.ny - 1 - iy);
                out[self.grid.index(ix, iy)] = self.u_min + (self.u_max - self.u_min) * t;
            }
        }
        Ok(out)
    }
}

/// Full pipeline for one task.
pub fn build_tsum(
    spec: &TaskSpec,
    table: &EmbeddingTable,
    fmap: &EnvFeatureMap,
    model: &EnvLinearModel,
    weights: ComponentWeights,
    u_min: f64,
    u_max: f64,
) -> Result<Tsum, TsumError> {
    let phi = relevance_field(spec, table)?;
    let c = constraint_field(spec, table)?;
    let e = env_field(fmap, model)?;
    aggregate(&phi, &c, &e, weights, u_min, u_max)
}

/// Ordinary least squares for the environment model, with intercept.
///
/// Features are centered so the intercept is never penalized; a singular
/// centered Gram matrix gets a 1e-8 ridge, which selects the minimum-norm
/// weights.
pub fn fit_env_model(fmap: &EnvFeatureMap, targets: &[f64]) -> Result<EnvLinearModel, TsumError> {
    let n = fmap.grid.len();
    let p = fmap.p;
    if targets.len() != n {
        return Err(TsumError::GridMismatch);
    }
    if n < p + 1 {
        return Err(TsumError::DegenerateSystem { rank: n, needed: p + 1 });
    }
    let mean_f: Vec<f64> = (0..p).map(|k| (0..n).map(|j| fmap.cell(j)[k]).sum::<f64>() / n as f64).collect();
    let mean_t = targets.iter().sum::<f64>() / n as f64;

    let identical_rows = (1..n).all(|j| fmap.cell(j) == fmap.cell(0));
    let targets_differ = targets.iter().any(|&t| t != targets[0]);
    if identical_rows && targets_differ {
        return Err(TsumError::DegenerateSystem { rank: 0, needed: p });
    }

    let centered: Vec<f64> = (0..n).flat_map(|j| fmap.cell(j).iter().zip(&mean_f).map(|(f, m)| f - m).collect::<Vec<_>>()).collect();
    let yc: Vec<f64> = targets.iter().map(|t| t - mean_t).collect();
    let (mut gram, moments) = normal_equations(&centered, n, p, &yc);
    let w = match cholesky_solve(&gram, p, &moments) {
        Some(w) => w,
        None => {
            for k in 0..p {
                gram[k * p + k] += RIDGE;
            }
            cholesky_solve(&gram, p, &moments).unwrap_or_else(|| vec![0.0; p])
        }
    };
    let b = mean_t - w.iter().zip(&mean_f).map(|(w, m)| w * m).sum::<f64>();
    Ok(EnvLinearModel { w_env: w, b_env: b })
}

/// Least-squares component weights that best reproduce a reference raw map.
pub fn fit_component_weights(
    phi: &Field,
    c: &Field,
    e: &Field,
    reference: &[f64],
) -> Result<ComponentWeights, TsumError> {
    let grid = check_grids(&[phi, c, e])?;
    let n = grid.len();
    if reference.len() != n {
        return Err(TsumError::GridMismatch);
    }
    let x: Vec<f64> = (0..n).flat_map(|j| [phi.values[j], c.values[j], e.values[j]]).collect();
    let (coef, rank) = qr_lstsq(&x, n, 3, reference);
    if rank < 3 {
        return Err(TsumError::DegenerateSystem { rank, needed: 3 });
    }
    Ok(ComponentWeights { w_phi: coef[0], w_c: coef[1], w_e: coef[2] })
}
