//! Tanh-squashed Gaussian policy with an optional Bernoulli mode head.
//!
//! Actions live in "policy space": each continuous coordinate is
//! `u = tanh(z) ∈ (−1, 1)`, followed (when the mode head is enabled) by the
//! mode value `y ∈ [0, 1]`. Environments map policy space onto their own
//! ranges. During gradient computation `y` is a relaxed Binary-Concrete
//! sample `σ((l + L)/T)` with logistic noise `L`; when acting it is the hard
//! sample `1[l + L > 0]`, which is Bernoulli(σ(l)).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::mlp::{Mlp, Tape};
use crate::LearnError;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Keeps `ln(1 − tanh²z)` finite when the squash saturates.
pub const SQUASH_EPS: f64 = 1e-6;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `y ln σ(l) + (1 − y) ln(1 − σ(l))`: the Bernoulli log-probability for a
/// hard `y`, smoothly interpolated for a relaxed one.
fn mode_log_prob(logit: f64, y: f64) -> f64 {
    -y * softplus(-logit) - (1.0 - y) * softplus(logit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub act_dim: usize,
    pub with_mode: bool,
}

/// Exogenous noise for a batch of reparameterized samples. Passing it in
/// explicitly makes every loss a deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNoise {
    /// Standard normal draws, `batch × act_dim`.
    pub gauss: Vec<f64>,
    /// Standard logistic draws for the mode head, `batch` (empty without it).
    pub logistic: Vec<f64>,
}

impl PolicyNoise {
    pub fn sample(rng: &mut impl Rng, batch: usize, act_dim: usize, with_mode: bool) -> Self {
        let gauss = (0..batch * act_dim).map(|_| rng.sample(StandardNormal)).collect();
        let logistic = if with_mode {
            (0..batch)
                .map(|_| {
                    let v: f64 = rng.gen_range(f64::EPSILON..1.0);
                    v.ln() - (-v).ln_1p()
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { gauss, logistic }
    }
}

/// A batch of reparameterized actions with everything backward needs.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub batch: usize,
    /// Policy-space actions, `batch × action_width`.
    pub actions: Vec<f64>,
    /// Pre-squash Gaussian coordinates, `batch × act_dim`.
    pub pre_tanh: Vec<f64>,
    pub log_pi: Vec<f64>,
    tape: Tape,
    noise: PolicyNoise,
    temperature: Option<f64>,
}

impl GaussianPolicy {
    pub fn new(obs_dim: usize, hidden: &[usize], act_dim: usize, with_mode: bool, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * act_dim + usize::from(with_mode));
        Self { net: Mlp::new(&sizes, rng), act_dim, with_mode }
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Width of a policy-space action: continuous coordinates plus the mode.
    pub fn action_width(&self) -> usize {
        self.act_dim + usize::from(self.with_mode)
    }

    fn out_width(&self) -> usize {
        2 * self.act_dim + usize::from(self.with_mode)
    }

    /// Reparameterized sample. With `temperature = Some(T)` the mode is the
    /// relaxed sample at temperature `T`; with `None` it is hard.
    pub fn sample(
        &self,
        obs: &[f64],
        batch: usize,
        noise: &PolicyNoise,
        temperature: Option<f64>,
    ) -> Result<PolicySample, LearnError> {
        let d = self.act_dim;
        if noise.gauss.len() != batch * d || noise.logistic.len() != if self.with_mode { batch } else { 0 } {
            return Err(LearnError::ShapeMismatch(format!("noise does not match a batch of {batch}")));
        }
        let tape = self.net.forward(obs, batch)?;
        let out = tape.output();
        let w = self.action_width();
        let mut actions = Vec::with_capacity(batch * w);
        let mut pre_tanh = Vec::with_capacity(batch * d);
        let mut log_pi = Vec::with_capacity(batch);
        for b in 0..batch {
            let row = &out[b * self.out_width()..(b + 1) * self.out_width()];
            let mut lp = 0.0;
            for j in 0..d {
                let ls = row[d + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let xi = noise.gauss[b * d + j];
                let z = row[j] + ls.exp() * xi;
                let u = z.tanh();
                lp += -0.5 * xi * xi - ls - HALF_LN_2PI - (1.0 - u * u + SQUASH_EPS).ln();
                pre_tanh.push(z);
                actions.push(u);
            }
            if self.with_mode {
                let l = row[2 * d];
                let s = l + noise.logistic[b];
                let y = match temperature {
                    Some(t) => sigmoid(s / t),
                    None => f64::from(u8::from(s > 0.0)),
                };
                lp += mode_log_prob(l, y);
                actions.push(y);
            }
            log_pi.push(lp);
        }
        Ok(PolicySample { batch, actions, pre_tanh, log_pi, tape, noise: noise.clone(), temperature })
    }

    /// Adds into `grad` the parameter gradient of a loss whose partial
    /// derivatives with respect to the sampled actions and log-densities are
    /// `d_actions` and `d_log_pi`.
    pub fn backward(
        &self,
        s: &PolicySample,
        d_actions: &[f64],
        d_log_pi: &[f64],
        grad: &mut [f64],
    ) -> Result<(), LearnError> {
        let (d, w, ow, batch) = (self.act_dim, self.action_width(), self.out_width(), s.batch);
        if d_actions.len() != batch * w || d_log_pi.len() != batch {
            return Err(LearnError::ShapeMismatch("upstream gradients do not match the sample".into()));
        }
        let out = s.tape.output();
        let mut d_out = vec![0.0; batch * ow];
        for b in 0..batch {
            let row = &out[b * ow..(b + 1) * ow];
            let dl = d_log_pi[b];
            for j in 0..d {
                let raw = row[d + j];
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let xi = s.noise.gauss[b * d + j];
                let u = s.actions[b * w + j];
                let one_m = 1.0 - u * u;
                let dz = d_actions[b * w + j] * one_m + dl * 2.0 * u * one_m / (one_m + SQUASH_EPS);
                d_out[b * ow + j] = dz;
                if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                    d_out[b * ow + d + j] = dz * ls.exp() * xi - dl;
                }
            }
            if self.with_mode {
                let l = row[2 * d];
                let y = s.actions[b * w + d];
                let p = sigmoid(l);
                let mut g = dl * (y - p);
                if let Some(t) = s.temperature {
                    let dy = y * (1.0 - y) / t;
                    g += (d_actions[b * w + d] + dl * l) * dy;
                }
                d_out[b * ow + 2 * d] = g;
            }
        }
        self.net.backward(&s.tape, &d_out, Some(grad))?;
        Ok(())
    }

    /// Stochastic action for environment interaction (hard mode sample).
    pub fn act(&self, obs: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>, LearnError> {
        let noise = PolicyNoise::sample(rng, 1, self.act_dim, self.with_mode);
        Ok(self.sample(obs, 1, &noise, None)?.actions)
    }

    /// Deterministic action: squashed mean, mode on when its probability
    /// exceeds 0.5.
    pub fn act_greedy(&self, obs: &[f64]) -> Result<Vec<f64>, LearnError> {
        let out = self.net.predict(obs)?;
        let mut a: Vec<f64> = out[..self.act_dim].iter().map(|m| m.tanh()).collect();
        if self.with_mode {
            a.push(f64::from(u8::from(sigmoid(out[2 * self.act_dim]) > 0.5)));
        }
        Ok(a)
    }

    /// Probability that the mode head fires at `obs`.
    pub fn mode_probability(&self, obs: &[f64]) -> Result<f64, LearnError> {
        if !self.with_mode {
            return Ok(0.0);
        }
        Ok(sigmoid(self.net.predict(obs)?[2 * self.act_dim]))
    }

    /// Log-density of the continuous part at squashed action `u`.
    pub fn log_density(&self, obs: &[f64], u: &[f64]) -> Result<f64, LearnError> {
        if u.len() != self.act_dim {
            return Err(LearnError::ShapeMismatch(format!("{} action coordinates, expected {}", u.len(), self.act_dim)));
        }
        let out = self.net.predict(obs)?;
        let d = self.act_dim;
        let mut lp = 0.0;
        for j in 0..d {
            let ls = out[d + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = u[j].atanh();
            let xi = (z - out[j]) / ls.exp();
            lp += -0.5 * xi * xi - ls - HALF_LN_2PI - (1.0 - u[j] * u[j] + SQUASH_EPS).ln();
        }
        Ok(lp)
    }

    /// Log-probability of pre-squash coordinates `z` and hard modes `y` for a
    /// batch, as used by likelihood-ratio methods. The squash Jacobian is
    /// omitted: it does not depend on the parameters.
    pub fn log_prob_pre_tanh(
        &self,
        obs: &[f64],
        z: &[f64],
        modes: &[f64],
        batch: usize,
    ) -> Result<(Vec<f64>, Tape), LearnError> {
        let d = self.act_dim;
        if z.len() != batch * d || modes.len() != if self.with_mode { batch } else { 0 } {
            return Err(LearnError::ShapeMismatch("actions do not match the batch".into()));
        }
        let tape = self.net.forward(obs, batch)?;
        let out = tape.output();
        let ow = self.out_width();
        let lp = (0..batch)
            .map(|b| {
                let row = &out[b * ow..(b + 1) * ow];
                let mut lp = 0.0;
                for j in 0..d {
                    let ls = row[d + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let xi = (z[b * d + j] - row[j]) / ls.exp();
                    lp += -0.5 * xi * xi - ls - HALF_LN_2PI;
                }
                if self.with_mode {
                    lp += mode_log_prob(row[2 * d], modes[b]);
                }
                lp
            })
            .collect();
        Ok((lp, tape))
    }

    /// Adds the parameter gradient of `Σ_b d_log_p[b] · log p_b` into `grad`.
    pub fn backward_log_prob_pre_tanh(
        &self,
        tape: &Tape,
        z: &[f64],
        modes: &[f64],
        d_log_p: &[f64],
        grad: &mut [f64],
    ) -> Result<(), LearnError> {
        let (d, ow, batch) = (self.act_dim, self.out_width(), tape.batch());
        let out = tape.output();
        let mut d_out = vec![0.0; batch * ow];
        for b in 0..batch {
            let row = &out[b * ow..(b + 1) * ow];
            let g = d_log_p[b];
            for j in 0..d {
                let raw = row[d + j];
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let xi = (z[b * d + j] - row[j]) / ls.exp();
                d_out[b * ow + j] = g * xi / ls.exp();
                if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                    d_out[b * ow + d + j] = g * (xi * xi - 1.0);
                }
            }
            if self.with_mode {
                d_out[b * ow + 2 * d] = g * (modes[b] - sigmoid(row[2 * d]));
            }
        }
        self.net.backward(tape, &d_out, Some(grad))?;
        Ok(())
    }
}
