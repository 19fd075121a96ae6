//! Fully connected ReLU networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (`out × in`, row-major) followed by the bias. A flat layout keeps the
//! optimizer, Polyak averaging and checkpointing trivial.

use matrixmultiply::dgemm;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by a batched forward pass, needed for backward.
#[derive(Debug, Clone)]
pub struct Tape {
    batch: usize,
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`
    /// (after ReLU for hidden layers, linear for the last one).
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has at least the input")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn n_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Network with layer widths `sizes` (input first, output last), weights
    /// and biases drawn uniformly from ±1/√fan_in.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|s| *s > 0), "bad layer sizes {sizes:?}");
        let mut params = Vec::with_capacity(n_params(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Self { sizes: sizes.to_vec(), params }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, LearnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(LearnError::ShapeMismatch(format!("bad layer sizes {sizes:?}")));
        }
        if params.len() != n_params(sizes) {
            return Err(LearnError::ShapeMismatch(format!(
                "{} parameters for layer sizes {sizes:?}, expected {}",
                params.len(),
                n_params(sizes)
            )));
        }
        Ok(Self { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Zeroed buffer shaped like the parameters.
    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    /// Forward pass on `batch` row-major inputs.
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<Tape, LearnError> {
        if x.len() != batch * self.input_dim() {
            return Err(LearnError::ShapeMismatch(format!(
                "input of length {} for batch {batch} × {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + i * o];
            let b = &self.params[off + i * o..off + i * o + o];
            off += i * o + o;
            let mut z = Vec::with_capacity(batch * o);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            let input = &acts[l];
            // z (batch × o) += input (batch × i) · wᵀ (i × o)
            unsafe {
                dgemm(
                    batch,
                    i,
                    o,
                    1.0,
                    input.as_ptr(),
                    i as isize,
                    1,
                    w.as_ptr(),
                    1,
                    i as isize,
                    1.0,
                    z.as_mut_ptr(),
                    o as isize,
                    1,
                );
            }
            if l + 1 < n_layers {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
        }
        Ok(Tape { batch, acts })
    }

    /// Single-sample convenience forward.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        Ok(self.forward(x, 1)?.output().to_vec())
    }

    /// Backpropagates `d_out` (batch × out) through the recorded pass.
    /// Parameter gradients are *added* into `grad` when given; the gradient
    /// with respect to the input is returned.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], mut grad: Option<&mut [f64]>) -> Result<Vec<f64>, LearnError> {
        let batch = tape.batch;
        if d_out.len() != batch * self.output_dim() {
            return Err(LearnError::ShapeMismatch(format!(
                "output gradient of length {} for batch {batch} × {}",
                d_out.len(),
                self.output_dim()
            )));
        }
        if let Some(g) = grad.as_deref() {
            if g.len() != self.params.len() {
                return Err(LearnError::ShapeMismatch(format!(
                    "gradient buffer of length {} for {} parameters",
                    g.len(),
                    self.params.len()
                )));
            }
        }
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut dz = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &tape.acts[l];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g[off..off + i * o + o].split_at_mut(i * o);
                // gw (o × i) += dzᵀ (o × batch) · input (batch × i)
                unsafe {
                    dgemm(
                        o,
                        batch,
                        i,
                        1.0,
                        dz.as_ptr(),
                        1,
                        o as isize,
                        input.as_ptr(),
                        i as isize,
                        1,
                        1.0,
                        gw.as_mut_ptr(),
                        i as isize,
                        1,
                    );
                }
                for row in dz.chunks_exact(o) {
                    for (b, d) in gb.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            let w = &self.params[off..off + i * o];
            let mut dx = vec![0.0; batch * i];
            // dx (batch × i) = dz (batch × o) · w (o × i)
            unsafe {
                dgemm(
                    batch,
                    o,
                    i,
                    1.0,
                    dz.as_ptr(),
                    o as isize,
                    1,
                    w.as_ptr(),
                    i as isize,
                    1,
                    0.0,
                    dx.as_mut_ptr(),
                    i as isize,
                    1,
                );
            }
            if l > 0 {
                for (d, a) in dx.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            dz = dx;
        }
        Ok(dz)
    }

    /// Smallest |pre-activation| of any hidden unit over the batch: how far
    /// the inputs are from a ReLU kink. Finite-difference checks need this
    /// comfortably above the step size.
    pub fn kink_margin(&self, x: &[f64], batch: usize) -> Result<f64, LearnError> {
        let tape = self.forward(x, batch)?;
        let mut margin = f64::INFINITY;
        let mut off = 0;
        for l in 0..self.sizes.len() - 2 {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + i * o];
            let b = &self.params[off + i * o..off + i * o + o];
            off += i * o + o;
            for row in tape.acts[l].chunks_exact(i) {
                for r in 0..o {
                    let z = b[r] + w[r * i..(r + 1) * i].iter().zip(row).map(|(a, c)| a * c).sum::<f64>();
                    margin = margin.min(z.abs());
                }
            }
        }
        Ok(margin)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Polyak averaging `target ← τ·online + (1 − τ)·target`, element-wise.
pub fn soft_update(online: &[f64], target: &mut [f64], polyak: f64) -> Result<(), LearnError> {
    if online.len() != target.len() {
        return Err(LearnError::ShapeMismatch(format!(
            "online has {} parameters, target {}",
            online.len(),
            target.len()
        )));
    }
    for (t, o) in target.iter_mut().zip(online) {
        *t = polyak * o + (1.0 - polyak) * *t;
    }
    Ok(())
}

/// Adam with bias correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer sized for a different parameter vector");
        assert_eq!(grad.len(), self.m.len(), "gradient sized for a different parameter vector");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grad[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let mh = self.m[k] / c1;
            let vh = self.v[k] / c2;
            params[k] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Largest `|analytic − central difference| / max(1, |analytic|)` over all
/// coordinates of `point`.
pub fn gradient_check(
    mut f: impl FnMut(&[f64]) -> f64,
    analytic: &[f64],
    point: &[f64],
    h: f64,
) -> Result<f64, LearnError> {
    if analytic.len() != point.len() {
        return Err(LearnError::ShapeMismatch(format!(
            "{} analytic components for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(LearnError::NonFiniteGradient);
    }
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + h;
        let up = f(&x);
        x[k] = orig - h;
        let down = f(&x);
        x[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        if !numeric.is_finite() {
            return Err(LearnError::NonFiniteGradient);
        }
        worst = worst.max((analytic[k] - numeric).abs() / analytic[k].abs().max(1.0));
    }
    Ok(worst)
}
