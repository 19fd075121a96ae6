//! Text and patch embeddings in a shared vector space.
//!
//! Tables come either from an exported manifest/blob pair or from
//! [`MockEncoder`], a deterministic stand-in that gives related keys a shared
//! bias direction so that, e.g., "navigate to dock" scores highest on the
//! patches covering the dock.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::Geometry;
use crate::rng::fnv1a;
use crate::task::{Constraint, Subtask, TaskSpec};
use crate::vocab::Vocabulary;

pub const DEFAULT_DIM: usize = 512;
/// Contrastive temperature of the vision-language encoder.
pub const CONTRASTIVE_TEMPERATURE: f64 = 0.07;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("zero-length vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("i/o error on {path}: {msg}")]
    Io { path: PathBuf, msg: String },
    #[error("invalid grid: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Self, EmbeddingError> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Self(self.0.iter().map(|&v| (f64::from(v) / n) as f32).collect()))
    }

    fn from_f64(v: &[f64]) -> Self {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self(v.iter().map(|x| (x / n) as f32).collect())
    }
}

/// Cosine similarity, accumulated in 64-bit and clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimMismatch(a.dim(), b.dim()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.0.iter().zip(&b.0) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Regular lattice of square cells over the arena. Cell `(ix, iy)` has flat
/// index `iy * nx + ix`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub origin: (f64, f64),
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl PatchGrid {
    pub fn new(origin: (f64, f64), cell_size: f64, nx: usize, ny: usize) -> Result<Self, EmbeddingError> {
        if nx == 0 || ny == 0 {
            return Err(EmbeddingError::Grid("grid needs at least one cell per axis".into()));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) || !origin.0.is_finite() || !origin.1.is_finite() {
            return Err(EmbeddingError::Grid("cell size must be positive and finite".into()));
        }
        Ok(Self { origin, cell_size, nx, ny })
    }

    /// Grid of `cell_size` cells covering a `width` x `height` arena anchored at the origin.
    pub fn covering(width: f64, height: f64, cell_size: f64) -> Result<Self, EmbeddingError> {
        let nx = (width / cell_size).ceil().max(1.0) as usize;
        let ny = (height / cell_size).ceil().max(1.0) as usize;
        Self::new((0.0, 0.0), cell_size, nx, ny)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.0 + (ix as f64 + 0.5) * self.cell_size,
            self.origin.1 + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn centers(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.len()).map(|i| {
            let (ix, iy) = self.coords(i);
            self.center(ix, iy)
        })
    }

    /// Cell containing `p`, if any.
    pub fn cell_of(&self, (x, y): (f64, f64)) -> Option<(usize, usize)> {
        let fx = ((x - self.origin.0) / self.cell_size).floor();
        let fy = ((y - self.origin.1) / self.cell_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 || fx.is_nan() || fy.is_nan() {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Nearest cell, clamping points outside the grid to the boundary.
    pub fn clamped_cell(&self, (x, y): (f64, f64)) -> (usize, usize) {
        let clamp = |v: f64, n: usize| -> usize {
            if v.is_nan() || v < 0.0 {
                0
            } else {
                (v.floor() as usize).min(n - 1)
            }
        };
        (
            clamp((x - self.origin.0) / self.cell_size, self.nx),
            clamp((y - self.origin.1) / self.cell_size, self.ny),
        )
    }

    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0,
            self.origin.1,
            self.origin.0 + self.nx as f64 * self.cell_size,
            self.origin.1 + self.ny as f64 * self.cell_size,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    text_keys: Vec<String>,
    text_vectors: Vec<EmbeddingVector>,
    index: HashMap<String, usize>,
    patches: Vec<EmbeddingVector>,
    grid: PatchGrid,
}

impl EmbeddingTable {
    pub fn new(
        dim: usize,
        text: Vec<(String, EmbeddingVector)>,
        patches: Vec<EmbeddingVector>,
        grid: PatchGrid,
    ) -> Result<Self, EmbeddingError> {
        if patches.len() != grid.len() {
            return Err(EmbeddingError::Grid(format!(
                "{} patch vectors for a {}x{} grid",
                patches.len(),
                grid.nx,
                grid.ny
            )));
        }
        for v in text.iter().map(|(_, v)| v).chain(&patches) {
            if v.dim() != dim {
                return Err(EmbeddingError::DimMismatch(v.dim(), dim));
            }
        }
        let mut index = HashMap::with_capacity(text.len());
        let (text_keys, text_vectors): (Vec<_>, Vec<_>) = text.into_iter().unzip();
        for (i, k) in text_keys.iter().enumerate() {
            if index.insert(k.clone(), i).is_some() {
                return Err(EmbeddingError::Grid(format!("duplicate text key '{k}'")));
            }
        }
        Ok(Self { dim, text_keys, text_vectors, index, patches, grid })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn text_keys(&self) -> &[String] {
        &self.text_keys
    }

    pub fn text(&self, key: &str) -> Option<&EmbeddingVector> {
        self.index.get(key).map(|&i| &self.text_vectors[i])
    }

    pub fn patches(&self) -> &[EmbeddingVector] {
        &self.patches
    }

    pub fn patch(&self, ix: usize, iy: usize) -> &EmbeddingVector {
        &self.patches[self.grid.index(ix, iy)]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridManifest {
    origin: [f64; 2],
    cell_size: f64,
    nx: usize,
    ny: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    dtype: String,
    text_keys: Vec<String>,
    grid: GridManifest,
    blob: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const BLOB_FILE: &str = "embeddings.f32";
const DTYPE: &str = "f32le";

fn io_err(path: &Path, e: impl std::fmt::Display) -> EmbeddingError {
    EmbeddingError::Io { path: path.to_path_buf(), msg: e.to_string() }
}

/// Write `table` as `manifest.json` plus a little-endian f32 blob into `dir`.
pub fn write_table(table: &EmbeddingTable, dir: impl AsRef<Path>) -> Result<PathBuf, EmbeddingError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let manifest = Manifest {
        dim: table.dim,
        dtype: DTYPE.into(),
        text_keys: table.text_keys.clone(),
        grid: GridManifest {
            origin: [table.grid.origin.0, table.grid.origin.1],
            cell_size: table.grid.cell_size,
            nx: table.grid.nx,
            ny: table.grid.ny,
        },
        blob: BLOB_FILE.into(),
    };
    let mut blob = Vec::with_capacity((table.text_vectors.len() + table.patches.len()) * table.dim * 4);
    for v in table.text_vectors.iter().chain(&table.patches) {
        for x in &v.0 {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, blob).map_err(|e| io_err(&blob_path, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| io_err(&manifest_path, e))?;
    fs::write(&manifest_path, text).map_err(|e| io_err(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Load a table from a manifest path (or the directory containing `manifest.json`).
pub fn load_table(manifest_path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbeddingError> {
    let mut path = manifest_path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(MANIFEST_FILE);
    }
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| EmbeddingError::Format { offset: 0, msg: format!("manifest: {e}") })?;
    if m.dtype != DTYPE {
        return Err(EmbeddingError::Format { offset: 0, msg: format!("unsupported dtype '{}'", m.dtype) });
    }
    if m.dim == 0 {
        return Err(EmbeddingError::Format { offset: 0, msg: "dim must be positive".into() });
    }
    let grid = PatchGrid::new((m.grid.origin[0], m.grid.origin[1]), m.grid.cell_size, m.grid.nx, m.grid.ny)?;
    let blob_path = path.parent().unwrap_or(Path::new(".")).join(&m.blob);
    let blob = fs::read(&blob_path).map_err(|e| io_err(&blob_path, e))?;

    let n_vectors = m.text_keys.len() + grid.len();
    let expected = (n_vectors * m.dim * 4) as u64;
    if (blob.len() as u64) < expected {
        // Offset of the first vector that is not fully present.
        let vec_bytes = (m.dim * 4) as u64;
        let offset = (blob.len() as u64 / vec_bytes) * vec_bytes;
        return Err(EmbeddingError::Format {
            offset,
            msg: format!("blob holds {} bytes, expected {expected}", blob.len()),
        });
    }
    if blob.len() as u64 > expected {
        return Err(EmbeddingError::Format { offset: expected, msg: "trailing bytes after last vector".into() });
    }
    let mut vectors = blob
        .chunks_exact(m.dim * 4)
        .map(|chunk| {
            EmbeddingVector(chunk.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
        })
        .collect::<Vec<_>>();
    let patches = vectors.split_off(m.text_keys.len());
    EmbeddingTable::new(m.dim, m.text_keys.into_iter().zip(vectors).collect(), patches, grid)
}

fn gaussian_unit(hash: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn key_hash(prefix: &str, key: &str, seed: u64) -> u64 {
    let mut bytes = Vec::with_capacity(prefix.len() + key.len() + 9);
    bytes.extend_from_slice(prefix.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(key.as_bytes());
    bytes.extend_from_slice(&seed.to_le_bytes());
    fnv1a(&bytes)
}

/// Untagged mock embedding: a unit vector that is a pure function of `(key, dim, seed)`.
pub fn mock_encode(key: &str, dim: usize, seed: u64) -> EmbeddingVector {
    MockEncoder::new(dim, seed).encode(key)
}

/// Deterministic stand-in for a pretrained encoder.
///
/// Keys registered under the same concept tag share a bias direction of
/// weight [`MockEncoder::bias`] relative to their unit random component.
#[derive(Debug, Clone)]
pub struct MockEncoder {
    pub dim: usize,
    pub seed: u64,
    pub bias: f64,
    tags: HashMap<String, Vec<String>>,
}

impl MockEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 2, "mock embeddings need at least two dimensions");
        Self { dim, seed, bias: 1.0, tags: HashMap::new() }
    }

    pub fn tag(&mut self, key: &str, concept: &str) {
        let tags = self.tags.entry(key.to_string()).or_default();
        if !tags.iter().any(|t| t == concept) {
            tags.push(concept.to_string());
        }
    }

    pub fn encode(&self, key: &str) -> EmbeddingVector {
        let mut v = gaussian_unit(key_hash("key", key, self.seed), self.dim);
        if let Some(tags) = self.tags.get(key) {
            for t in tags {
                let c = gaussian_unit(key_hash("concept", t, self.seed), self.dim);
                v.iter_mut().zip(&c).for_each(|(a, b)| *a += self.bias * b);
            }
        }
        EmbeddingVector::from_f64(&v)
    }
}

pub fn patch_key(ix: usize, iy: usize) -> String {
    format!("patch:{ix},{iy}")
}

fn point_concept(x: f64, y: f64) -> String {
    format!("point:{x},{y}")
}

/// Build a mock table for one task: every subtask/constraint key is tagged
/// with the concept of the place it mentions, and every patch with the
/// concepts of the places it overlaps.
pub fn mock_table(
    vocab: &Vocabulary,
    grid: PatchGrid,
    spec: &TaskSpec,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable, EmbeddingError> {
    let mut enc = MockEncoder::new(dim, seed);
    let reach = 0.5 * grid.cell_size * std::f64::consts::SQRT_2;
    let mut concepts: Vec<(String, Geometry, bool)> = Vec::new();

    let mut text_keys = Vec::new();
    let mut add = |enc: &mut MockEncoder, concepts: &mut Vec<(String, Geometry, bool)>, key: String, concept: String, geom: Geometry, edge: bool| {
        enc.tag(&key, &concept);
        if !concepts.iter().any(|(c, _, _)| *c == concept) {
            concepts.push((concept, geom, edge));
        }
        if !text_keys.contains(&key) {
            text_keys.push(key);
        }
    };
    let place = |name: &str| vocab.get(name).map(|p| p.geometry);
    let point = |x: f64, y: f64| Geometry::Disc { cx: x, cy: y, r: 0.5 * grid.cell_size };

    for s in &spec.primaries {
        let key = s.canonical_text();
        match s {
            Subtask::GoalWaypoint { x, y } => add(&mut enc, &mut concepts, key, point_concept(*x, *y), point(*x, *y), false),
            Subtask::GoalLandmark(n) | Subtask::ReturnTo(n) | Subtask::Explore(n) => {
                if let Some(g) = place(n) {
                    add(&mut enc, &mut concepts, key, format!("place:{n}"), g, false);
                }
            }
            Subtask::Perimeter(n) => {
                if let Some(g) = place(n) {
                    add(&mut enc, &mut concepts, key, format!("edge:{n}"), g, true);
                }
            }
        }
    }
    for c in &spec.auxiliaries {
        let key = c.canonical_text();
        match c {
            Constraint::AvoidPoint { x, y, .. } => add(&mut enc, &mut concepts, key, point_concept(*x, *y), point(*x, *y), false),
            Constraint::AvoidLandmark { name, .. } | Constraint::AvoidRegion(name) | Constraint::StayWithin(name) => {
                if let Some(g) = place(name) {
                    add(&mut enc, &mut concepts, key, format!("place:{name}"), g, false);
                }
            }
        }
    }

    let mut patches = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let (ix, iy) = grid.coords(i);
        let key = patch_key(ix, iy);
        let c = grid.center(ix, iy);
        for (concept, geom, edge) in &concepts {
            let d = geom.signed_distance(c);
            let hit = if *edge { d.abs() <= grid.cell_size } else { d <= reach };
            if hit {
                enc.tag(&key, concept);
            }
        }
        patches.push(enc.encode(&key));
    }
    let text = text_keys.into_iter().map(|k| {
        let v = enc.encode(&k);
        (k, v)
    });
    EmbeddingTable::new(dim, text.collect(), patches, grid)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax cross-entropy of the positive entry of one similarity row.
pub fn contrastive_loss(sims_row: &[f64], positive_index: usize, temperature: f64) -> f64 {
    assert!(temperature > 0.0, "temperature must be positive");
    assert!(positive_index < sims_row.len(), "positive index out of range");
    let max = sims_row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s / temperature));
    let sum: f64 = sims_row.iter().map(|&s| (s / temperature - max).exp()).sum();
    let loss = (max - sims_row[positive_index] / temperature) + sum.ln();
    loss.max(0.0)
}

/// Squared error between binary labels and temperature-scaled logistic similarities.
pub fn alignment_loss(labels: &[u8], sims: &[f64], temperature: f64) -> f64 {
    assert_eq!(labels.len(), sims.len(), "labels and similarities differ in length");
    assert!(temperature > 0.0, "temperature must be positive");
    labels
        .iter()
        .zip(sims)
        .map(|(&y, &s)| {
            let r = f64::from(y) - logistic(s / temperature);
            r * r
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::parse_task;

    fn ev(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector(v.to_vec())
    }

    #[test]
    fn cosine_identity_antipodal_orthogonal() {
        let v = ev(&[0.3, -1.2, 2.0]);
        let neg = ev(&[-0.3, 1.2, -2.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&ev(&[1.0, 0.0, 0.0]), &ev(&[0.0, 1.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn cosine_zero_vector_errors() {
        assert!(matches!(cosine(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0])), Err(EmbeddingError::ZeroVector)));
    }

    #[test]
    fn mock_encode_is_deterministic_and_unit() {
        let a = mock_encode("navigate to dock", 512, 9);
        let b = mock_encode("navigate to dock", 512, 9);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert_ne!(a, mock_encode("navigate to dock", 512, 10));
    }

    #[test]
    fn tagged_pairs_beat_untagged_pairs() {
        let mut enc = MockEncoder::new(512, 3);
        let mut tagged = 0.0;
        let mut untagged = 0.0;
        for i in 0..1000 {
            let (a, b) = (format!("text {i}"), format!("patch {i}"));
            enc.tag(&a, &format!("c{i}"));
            enc.tag(&b, &format!("c{i}"));
            tagged += cosine(&enc.encode(&a), &enc.encode(&b)).unwrap();
            untagged += cosine(&enc.encode(&format!("u{i}")), &enc.encode(&format!("w{i}"))).unwrap();
        }
        let (tagged, untagged) = (tagged / 1000.0, untagged / 1000.0);
        assert!(tagged > untagged + 0.3, "tagged {tagged} untagged {untagged}");
    }

    #[test]
    fn mock_table_scores_dock_patches_highest() {
        let vocab = Vocabulary::default_lake();
        let spec = parse_task("go to the dock", &vocab).unwrap();
        let grid = PatchGrid::covering(100.0, 100.0, 5.0).unwrap();
        let t = mock_table(&vocab, grid, &spec, 128, 1).unwrap();
        let q = t.text("navigate to dock").unwrap();
        let dock_cell = grid.cell_of((94.0, 16.0)).unwrap();
        let far_cell = grid.cell_of((10.0, 90.0)).unwrap();
        let near = cosine(q, t.patch(dock_cell.0, dock_cell.1)).unwrap();
        let far = cosine(q, t.patch(far_cell.0, far_cell.1)).unwrap();
        assert!(near > 0.3 && far.abs() < 0.3, "near {near} far {far}");
    }

    #[test]
    fn contrastive_examples() {
        let expected = (-1.0f64 / 0.07).exp().ln_1p();
        assert!((contrastive_loss(&[1.0, 0.0], 0, 0.07) - expected).abs() < 1e-15);
        assert!((contrastive_loss(&[0.4, 0.4], 0, 0.07) - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(contrastive_loss(&[0.5], 0, 0.07), 0.0);
    }

    #[test]
    fn alignment_examples() {
        assert!((alignment_loss(&[1], &[0.0], 1.0) - 0.25).abs() < 1e-15);
        assert!(alignment_loss(&[0], &[-1000.0], 0.07) < 1e-12);
        assert!((alignment_loss(&[1, 0], &[0.0, 0.0], 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_cell_mapping() {
        let g = PatchGrid::new((10.0, 20.0), 5.0, 4, 3).unwrap();
        assert_eq!(g.cell_of((10.0, 20.0)), Some((0, 0)));
        assert_eq!(g.cell_of((29.9, 34.9)), Some((3, 2)));
        assert_eq!(g.cell_of((30.0, 25.0)), None);
        assert_eq!(g.clamped_cell((-100.0, 100.0)), (0, 2));
        for i in 0..g.len() {
            let (ix, iy) = g.coords(i);
            assert_eq!(g.cell_of(g.center(ix, iy)), Some((ix, iy)));
        }
        assert!(PatchGrid::new((0.0, 0.0), 0.0, 1, 1).is_err());
        assert!(PatchGrid::new((0.0, 0.0), 1.0, 0, 1).is_err());
    }
}
