//! Proximal policy optimization with generalized advantage estimation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::mlp::{Adam, Mlp};
use crate::policy::{GaussianPolicy, PolicyNoise};
use crate::sac::UpdateStats;
use crate::{streams, LearnError, TrainOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs_per_update: usize,
    pub gae_lambda: f64,
    /// Minibatch size.
    pub batch: usize,
    pub lr: f64,
    pub gamma: f64,
    /// Environment steps collected per update.
    pub rollout_steps: usize,
    pub hidden: Vec<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs_per_update: 10,
            gae_lambda: 0.95,
            batch: 64,
            lr: 3e-4,
            gamma: 0.99,
            rollout_steps: 2048,
            hidden: vec![256, 256],
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.into()));
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if self.batch == 0 || self.rollout_steps == 0 || self.epochs_per_update == 0 {
            return bad("batch, rollout_steps and epochs_per_update must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// Probability ratio that multiplies the advantage in the clipped
/// surrogate `min(r·A, clip(r, 1 − ε, 1 + ε)·A)`.
pub fn surrogate_ratio(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    if ratio * advantage <= clipped * advantage {
        ratio
    } else {
        clipped
    }
}

/// Clipped surrogate objective and its derivative with respect to the ratio.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> (f64, f64) {
    let used = surrogate_ratio(ratio, advantage, clip);
    let d = if used == ratio { advantage } else { 0.0 };
    (used * advantage, d)
}

/// Generalized advantage estimates. `next_values[t]` is the value of the
/// state reached at step `t`; `terminals` cut the bootstrap, `ends` (any
/// episode end, including truncation) cut the recursion.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminals: &[bool],
    ends: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    assert!(
        values.len() == n && next_values.len() == n && terminals.len() == n && ends.len() == n,
        "rollout columns must have equal length"
    );
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let boot = if terminals[t] { 0.0 } else { next_values[t] };
        let delta = rewards[t] + gamma * boot - values[t];
        let carry = if ends[t] { 0.0 } else { running };
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    adv
}

struct Rollout {
    obs: Vec<f64>,
    pre_tanh: Vec<f64>,
    modes: Vec<f64>,
    log_p: Vec<f64>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    next_values: Vec<f64>,
    terminals: Vec<bool>,
    ends: Vec<bool>,
}

impl Rollout {
    fn new() -> Self {
        Self {
            obs: Vec::new(),
            pre_tanh: Vec::new(),
            modes: Vec::new(),
            log_p: Vec::new(),
            rewards: Vec::new(),
            values: Vec::new(),
            next_values: Vec::new(),
            terminals: Vec::new(),
            ends: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.rewards.len()
    }
}

fn gather(src: &[f64], idx: &[usize], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
    out
}

/// On-policy training: rollouts of `rollout_steps`, then several epochs of
/// clipped-surrogate minibatch updates for the actor and squared-error
/// updates for a separate value network.
pub fn train_ppo<E: Environment>(env: &mut E, cfg: &PpoConfig, steps: usize, seed: u64) -> Result<TrainOutput, LearnError> {
    cfg.validate()?;
    let (od, ad, with_mode) = (env.obs_dim(), env.action_dim(), env.has_mode());
    let mut init = guide_core::rng::stream(seed, guide_core::rng::streams::INIT);
    let mut policy = GaussianPolicy::new(od, &cfg.hidden, ad, with_mode, &mut init);
    let mut sizes = vec![od];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(1);
    let mut value = Mlp::new(&sizes, &mut init);
    let adam = |n: usize| Adam::new(n, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let (mut opt_pi, mut opt_v) = (adam(policy.net.n_params()), adam(value.n_params()));
    let mut act_rng = guide_core::rng::stream(seed, guide_core::rng::streams::TRAINER);
    let mut update_rng = guide_core::rng::stream(seed, streams::UPDATE);
    let mut episode_rng = guide_core::rng::stream(seed, streams::EPISODES);
    let mut metrics = Vec::new();
    let mut tracker = crate::sac::EpisodeTracker::default();
    let mut stats = UpdateStats::default();
    let mut obs = if steps > 0 { env.reset(episode_rng.gen())? } else { Vec::new() };
    let mut t = 0;
    while t < steps {
        let mut ro = Rollout::new();
        while ro.len() < cfg.rollout_steps && t < steps {
            let noise = PolicyNoise::sample(&mut act_rng, 1, ad, with_mode);
            let s = policy.sample(&obs, 1, &noise, None)?;
            let modes: Vec<f64> = if with_mode { vec![s.actions[ad]] } else { Vec::new() };
            let (lp, _) = policy.log_prob_pre_tanh(&obs, &s.pre_tanh, &modes, 1)?;
            let v = value.predict(&obs)?[0];
            let st = env.step(&s.actions)?;
            t += 1;
            tracker.record(st.base_reward, st.exact_fix);
            let next_v = if st.terminal { 0.0 } else { value.predict(&st.obs)?[0] };
            ro.obs.extend_from_slice(&obs);
            ro.pre_tanh.extend_from_slice(&s.pre_tanh);
            ro.modes.extend_from_slice(&modes);
            ro.log_p.push(lp[0]);
            ro.rewards.push(st.reward);
            ro.values.push(v);
            ro.next_values.push(next_v);
            ro.terminals.push(st.terminal);
            ro.ends.push(st.episode_over());
            if st.episode_over() {
                metrics.push(tracker.finish(t, st.completed_fraction, stats));
                if t < steps {
                    obs = env.reset(episode_rng.gen())?;
                }
            } else {
                obs = st.obs;
            }
        }
        let n = ro.len();
        let adv = gae(&ro.rewards, &ro.values, &ro.next_values, &ro.terminals, &ro.ends, cfg.gamma, cfg.gae_lambda);
        let returns: Vec<f64> = adv.iter().zip(&ro.values).map(|(a, v)| a + v).collect();
        let mean = adv.iter().sum::<f64>() / n as f64;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let adv: Vec<f64> = adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect();
        let mut idx: Vec<usize> = (0..n).collect();
        let mw = usize::from(with_mode);
        for _ in 0..cfg.epochs_per_update {
            idx.shuffle(&mut update_rng);
            for mb in idx.chunks(cfg.batch) {
                let m = mb.len();
                let o = gather(&ro.obs, mb, od);
                let z = gather(&ro.pre_tanh, mb, ad);
                let y = gather(&ro.modes, mb, mw);
                let (lp, tape) = policy.log_prob_pre_tanh(&o, &z, &y, m)?;
                let mut d_lp = vec![0.0; m];
                let mut surrogate = 0.0;
                for (k, &i) in mb.iter().enumerate() {
                    let ratio = (lp[k] - ro.log_p[i]).exp();
                    let (obj, d_ratio) = clipped_objective(ratio, adv[i], cfg.clip);
                    surrogate -= obj / m as f64;
                    d_lp[k] = -d_ratio * ratio / m as f64;
                }
                let mut g = policy.net.zero_grad();
                policy.backward_log_prob_pre_tanh(&tape, &z, &y, &d_lp, &mut g)?;
                opt_pi.step(policy.net.params_mut(), &g);
                let vt = value.forward(&o, m)?;
                let mut d_v = vec![0.0; m];
                let mut v_loss = 0.0;
                for (k, &i) in mb.iter().enumerate() {
                    let r = vt.output()[k] - returns[i];
                    v_loss += r * r / m as f64;
                    d_v[k] = 2.0 * r / m as f64;
                }
                let mut gv = value.zero_grad();
                value.backward(&vt, &d_v, Some(&mut gv))?;
                opt_v.step(value.params_mut(), &gv);
                stats = UpdateStats { q_loss: v_loss, policy_loss: surrogate, alpha: 0.0, spread: 0.0 };
            }
        }
    }
    if !policy.net.is_finite() {
        return Err(LearnError::NonFiniteGradient);
    }
    Ok(TrainOutput { policy, metrics, steps })
}
