//! Soft actor-critic with automatic temperature tuning, optionally with a
//! bootstrapped critic ensemble.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{bootstrap_mask, Batch, ReplayBuffer, Transition};
use crate::env::Environment;
use crate::mlp::{soft_update, Adam, Mlp, Tape};
use crate::policy::{GaussianPolicy, PolicyNoise};
use crate::{streams, EpisodeMetrics, LearnError, TrainOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub alpha_init: f64,
    pub target_entropy: f64,
    pub polyak: f64,
    pub batch: usize,
    pub lr_policy: f64,
    pub lr_q: f64,
    pub lr_alpha: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Hidden layer widths shared by the actor and the critics.
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    /// Uniform-random steps before the first gradient update.
    pub warmup_steps: usize,
    /// Number of twin critics whose minimum forms the value.
    pub n_critics: usize,
    /// Relaxation temperature of the mode head, annealed linearly from
    /// start to end over `mode_anneal_steps` environment steps.
    pub mode_temperature_start: f64,
    pub mode_temperature_end: f64,
    pub mode_anneal_steps: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha_init: 0.2,
            target_entropy: -2.0,
            polyak: 0.005,
            batch: 256,
            lr_policy: 3e-4,
            lr_q: 3e-4,
            lr_alpha: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            hidden: vec![256, 256],
            buffer_capacity: 1_000_000,
            warmup_steps: 1_000,
            n_critics: 2,
            mode_temperature_start: 1.0,
            mode_temperature_end: 0.1,
            mode_anneal_steps: 50_000,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.polyak > 0.0 && self.polyak <= 1.0) {
            return bad("polyak must lie in (0, 1]");
        }
        if !(self.alpha_init > 0.0) {
            return bad("alpha_init must be positive");
        }
        if self.batch == 0 || self.buffer_capacity < self.batch {
            return bad("batch must be positive and fit in the buffer");
        }
        if self.n_critics == 0 || self.n_critics > 32 {
            return bad("n_critics must be between 1 and 32");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.mode_temperature_start > 0.0 && self.mode_temperature_end > 0.0) {
            return bad("mode temperatures must be positive");
        }
        for lr in [self.lr_policy, self.lr_q, self.lr_alpha] {
            if !(lr > 0.0) {
                return bad("learning rates must be positive");
            }
        }
        Ok(())
    }

    /// Mode-head relaxation temperature after `step` environment steps.
    pub fn mode_temperature(&self, step: usize) -> f64 {
        let frac = if self.mode_anneal_steps == 0 { 1.0 } else { (step as f64 / self.mode_anneal_steps as f64).min(1.0) };
        self.mode_temperature_start + (self.mode_temperature_end - self.mode_temperature_start) * frac
    }
}

/// Bootstrapped critic ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub heads: usize,
    /// Probability that a head trains on a given transition.
    pub inclusion: f64,
    /// Standard deviations subtracted from the head mean for the actor.
    pub pessimism: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { heads: 10, inclusion: 0.8, pessimism: 1.0 }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(1..=32).contains(&self.heads) {
            return Err(LearnError::InvalidConfig("heads must be between 1 and 32".into()));
        }
        if !(self.inclusion > 0.0 && self.inclusion <= 1.0) {
            return Err(LearnError::InvalidConfig("inclusion must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// How critic outputs combine into targets and the actor's value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValueRule {
    /// Shared target from the minimum over target critics; the actor
    /// maximizes the minimum over critics.
    Min,
    /// Each head bootstraps from its own target; the actor maximizes
    /// `mean − k·std` over heads.
    Pessimistic(f64),
}

/// Soft Bellman target `r + (1 − done)·γ·(minQ' − α·log π')`.
pub fn bellman_target(r: f64, done: bool, min_q_next: f64, log_pi_next: f64, gamma: f64, alpha: f64) -> f64 {
    if done {
        r
    } else {
        r + gamma * (min_q_next - alpha * log_pi_next)
    }
}

/// Temperature loss `E[−α(log π + H̄)]` and its derivative in `α`.
pub fn alpha_loss(log_pis: &[f64], alpha: f64, target_entropy: f64) -> (f64, f64) {
    let n = log_pis.len().max(1) as f64;
    let m = log_pis.iter().map(|lp| lp + target_entropy).sum::<f64>() / n;
    (-alpha * m, -m)
}

fn concat(obs: &[f64], actions: &[f64], batch: usize, od: usize, aw: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(batch * (od + aw));
    for b in 0..batch {
        x.extend_from_slice(&obs[b * od..(b + 1) * od]);
        x.extend_from_slice(&actions[b * aw..(b + 1) * aw]);
    }
    x
}

fn check_critics(critics: &[Mlp], batch: &Batch) -> Result<(), LearnError> {
    if critics.is_empty() {
        return Err(LearnError::ShapeMismatch("no critics".into()));
    }
    let want = batch.obs_dim + batch.act_width;
    for c in critics {
        if c.input_dim() != want || c.output_dim() != 1 {
            return Err(LearnError::ShapeMismatch(format!(
                "critic maps {} → {}, expected {want} → 1",
                c.input_dim(),
                c.output_dim()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CriticLoss {
    pub loss: f64,
    /// One parameter gradient per critic.
    pub grads: Vec<Vec<f64>>,
    pub mean_q: f64,
}

/// Sum over critics of the mean squared soft Bellman residual, with next
/// actions drawn from `policy` using `noise` (hard modes). Under
/// [`ValueRule::Pessimistic`] head `k` only sees transitions whose mask has
/// bit `k` set.
#[allow(clippy::too_many_arguments)]
pub fn q_loss(
    batch: &Batch,
    critics: &[Mlp],
    targets: &[Mlp],
    policy: &GaussianPolicy,
    gamma: f64,
    alpha: f64,
    noise: &PolicyNoise,
    rule: ValueRule,
) -> Result<CriticLoss, LearnError> {
    check_critics(critics, batch)?;
    check_critics(targets, batch)?;
    if critics.len() != targets.len() {
        return Err(LearnError::ShapeMismatch("one target per critic required".into()));
    }
    if policy.obs_dim() != batch.obs_dim || policy.action_width() != batch.act_width {
        return Err(LearnError::ShapeMismatch("policy does not match the batch".into()));
    }
    let (n, od, aw) = (batch.len, batch.obs_dim, batch.act_width);
    let next = policy.sample(&batch.next_obs, n, noise, None)?;
    let next_x = concat(&batch.next_obs, &next.actions, n, od, aw);
    let next_q: Vec<Vec<f64>> =
        targets.iter().map(|t| t.forward(&next_x, n).map(|tp| tp.output().to_vec())).collect::<Result<_, _>>()?;
    let x = concat(&batch.obs, &batch.actions, n, od, aw);
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(critics.len());
    let mut q_sum = 0.0;
    for (k, critic) in critics.iter().enumerate() {
        let tape = critic.forward(&x, n)?;
        let q = tape.output();
        let included: Vec<bool> = match rule {
            ValueRule::Min => vec![true; n],
            ValueRule::Pessimistic(_) => batch.masks.iter().map(|m| m >> k & 1 == 1).collect(),
        };
        let count = included.iter().filter(|i| **i).count();
        let mut d = vec![0.0; n];
        if count > 0 {
            for b in 0..n {
                if !included[b] {
                    continue;
                }
                let tail = match rule {
                    ValueRule::Min => next_q.iter().fold(f64::INFINITY, |m, v| m.min(v[b])),
                    ValueRule::Pessimistic(_) => next_q[k][b],
                };
                let y = bellman_target(batch.rewards[b], batch.dones[b], tail, next.log_pi[b], gamma, alpha);
                let r = q[b] - y;
                loss += r * r / count as f64;
                d[b] = 2.0 * r / count as f64;
            }
        }
        q_sum += q.iter().sum::<f64>() / n as f64;
        let mut g = critic.zero_grad();
        critic.backward(&tape, &d, Some(&mut g))?;
        grads.push(g);
    }
    Ok(CriticLoss { loss, grads, mean_q: q_sum / critics.len() as f64 })
}

#[derive(Debug, Clone)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Log-densities of the sampled actions (for the temperature update).
    pub log_pis: Vec<f64>,
    /// Mean across the batch of the standard deviation over critics.
    pub spread: f64,
}

/// `E[α·log π(a|s) − V(s, a)]` with `a` reparameterized from `noise`, where
/// `V` combines the critics according to `rule`.
#[allow(clippy::too_many_arguments)]
pub fn policy_loss(
    obs: &[f64],
    n: usize,
    critics: &[Mlp],
    policy: &GaussianPolicy,
    alpha: f64,
    noise: &PolicyNoise,
    temperature: f64,
    rule: ValueRule,
) -> Result<PolicyLoss, LearnError> {
    let (od, aw) = (policy.obs_dim(), policy.action_width());
    if obs.len() != n * od {
        return Err(LearnError::ShapeMismatch("observations do not match the policy".into()));
    }
    if critics.is_empty() || critics.iter().any(|c| c.input_dim() != od + aw || c.output_dim() != 1) {
        return Err(LearnError::ShapeMismatch("critics do not match the policy".into()));
    }
    let s = policy.sample(obs, n, noise, Some(temperature))?;
    let x = concat(obs, &s.actions, n, od, aw);
    let tapes: Vec<Tape> = critics.iter().map(|c| c.forward(&x, n)).collect::<Result<_, _>>()?;
    let k = critics.len() as f64;
    let mut loss = 0.0;
    let mut spread = 0.0;
    // dV/dQ_k per sample.
    let mut w = vec![vec![0.0; n]; critics.len()];
    for b in 0..n {
        let qs: Vec<f64> = tapes.iter().map(|t| t.output()[b]).collect();
        // Unanimous heads have exactly zero spread; the rounded mean of equal
        // values need not equal them.
        let (mean, std) = if qs.iter().all(|q| *q == qs[0]) {
            (qs[0], 0.0)
        } else {
            let mean = qs.iter().sum::<f64>() / k;
            (mean, (qs.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / k).sqrt())
        };
        spread += std / n as f64;
        let v = match rule {
            ValueRule::Min => {
                let (arg, v) = qs.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, q)| if *q < acc.1 { (i, *q) } else { acc });
                w[arg][b] = 1.0;
                v
            }
            ValueRule::Pessimistic(c) => {
                for (i, q) in qs.iter().enumerate() {
                    w[i][b] = 1.0 / k - if std > 0.0 { c * (q - mean) / (k * std) } else { 0.0 };
                }
                mean - c * std
            }
        };
        loss += (alpha * s.log_pi[b] - v) / n as f64;
    }
    let mut d_actions = vec![0.0; n * aw];
    for (ci, critic) in critics.iter().enumerate() {
        let d_q: Vec<f64> = w[ci].iter().map(|wi| -wi / n as f64).collect();
        let dx = critic.backward(&tapes[ci], &d_q, None)?;
        for b in 0..n {
            for j in 0..aw {
                d_actions[b * aw + j] += dx[b * (od + aw) + od + j];
            }
        }
    }
    let d_log_pi = vec![alpha / n as f64; n];
    let mut grad = policy.net.zero_grad();
    policy.backward(&s, &d_actions, &d_log_pi, &mut grad)?;
    Ok(PolicyLoss { loss, grad, log_pis: s.log_pi, spread })
}

/// Actor, critics, targets and optimizers of one SAC learner.
#[derive(Debug, Clone)]
pub struct SacAgent {
    pub cfg: SacConfig,
    pub rule: ValueRule,
    pub policy: GaussianPolicy,
    pub critics: Vec<Mlp>,
    pub targets: Vec<Mlp>,
    pub log_alpha: f64,
    opt_policy: Adam,
    opt_critics: Vec<Adam>,
    opt_alpha: Adam,
}

/// Statistics of one gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub q_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub spread: f64,
}

impl SacAgent {
    /// Fresh networks for `obs_dim` inputs. Heads come from `rule`'s ensemble
    /// size `n_heads`; initialization draws from `rng` in a fixed order
    /// (actor, then each critic).
    pub fn new(
        cfg: &SacConfig,
        obs_dim: usize,
        act_dim: usize,
        with_mode: bool,
        n_heads: usize,
        rule: ValueRule,
        rng: &mut impl Rng,
    ) -> Self {
        let policy = GaussianPolicy::new(obs_dim, &cfg.hidden, act_dim, with_mode, rng);
        let mut sizes = vec![obs_dim + policy.action_width()];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(1);
        let critics: Vec<Mlp> = (0..n_heads).map(|_| Mlp::new(&sizes, rng)).collect();
        let adam = |n: usize, lr: f64| Adam::new(n, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        Self {
            opt_policy: adam(policy.net.n_params(), cfg.lr_policy),
            opt_critics: critics.iter().map(|c| adam(c.n_params(), cfg.lr_q)).collect(),
            opt_alpha: adam(1, cfg.lr_alpha),
            targets: critics.clone(),
            critics,
            policy,
            log_alpha: cfg.alpha_init.ln(),
            rule,
            cfg: cfg.clone(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// One gradient step on critics, actor and temperature, followed by the
    /// target update.
    pub fn update(&mut self, batch: &Batch, step: usize, rng: &mut impl Rng) -> Result<UpdateStats, LearnError> {
        let (n, d, m) = (batch.len, self.policy.act_dim, self.policy.with_mode);
        let alpha = self.alpha();
        let noise = PolicyNoise::sample(rng, n, d, m);
        let cl = q_loss(batch, &self.critics, &self.targets, &self.policy, self.cfg.gamma, alpha, &noise, self.rule)?;
        for ((c, opt), g) in self.critics.iter_mut().zip(&mut self.opt_critics).zip(&cl.grads) {
            opt.step(c.params_mut(), g);
        }
        let noise = PolicyNoise::sample(rng, n, d, m);
        let temp = self.cfg.mode_temperature(step);
        let pl = policy_loss(&batch.obs, n, &self.critics, &self.policy, alpha, &noise, temp, self.rule)?;
        self.opt_policy.step(self.policy.net.params_mut(), &pl.grad);
        let (_, d_alpha) = alpha_loss(&pl.log_pis, alpha, self.cfg.target_entropy);
        let mut la = [self.log_alpha];
        self.opt_alpha.step(&mut la, &[alpha * d_alpha]);
        self.log_alpha = la[0];
        for (c, t) in self.critics.iter().zip(&mut self.targets) {
            soft_update(c.params(), t.params_mut(), self.cfg.polyak)?;
        }
        Ok(UpdateStats { q_loss: cl.loss, policy_loss: pl.loss, alpha: self.alpha(), spread: pl.spread })
    }
}

fn uniform_action(rng: &mut impl Rng, act_dim: usize, with_mode: bool) -> Vec<f64> {
    let mut a: Vec<f64> = (0..act_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    if with_mode {
        a.push(f64::from(u8::from(rng.gen_bool(0.5))));
    }
    a
}

/// Episode bookkeeping shared by the trainers.
#[derive(Debug, Default)]
pub(crate) struct EpisodeTracker {
    episode: usize,
    ret: f64,
    exact: usize,
}

impl EpisodeTracker {
    pub(crate) fn record(&mut self, r: f64, exact: bool) {
        self.ret += r;
        self.exact += usize::from(exact);
    }

    pub(crate) fn finish(&mut self, step: usize, completed_fraction: f64, stats: UpdateStats) -> EpisodeMetrics {
        let m = EpisodeMetrics {
            step,
            episode: self.episode,
            ret: self.ret,
            tcr: 100.0 * completed_fraction,
            alpha: stats.alpha,
            q_loss: stats.q_loss,
            policy_loss: stats.policy_loss,
            exact_fix_count: self.exact,
            value_spread: stats.spread,
        };
        self.episode += 1;
        self.ret = 0.0;
        self.exact = 0;
        m
    }
}

/// Runs SAC on `env` for `steps` environment steps: uniform-random actions
/// for the warm-up, then one gradient step per environment step. With
/// `ensemble`, the critics are bootstrap heads and the actor is pessimistic.
pub fn train_sac<E: Environment>(
    env: &mut E,
    cfg: &SacConfig,
    ensemble: Option<&BootstrapConfig>,
    steps: usize,
    seed: u64,
) -> Result<TrainOutput, LearnError> {
    cfg.validate()?;
    if let Some(e) = ensemble {
        e.validate()?;
    }
    let (od, ad, with_mode) = (env.obs_dim(), env.action_dim(), env.has_mode());
    let mut init = guide_core::rng::stream(seed, guide_core::rng::streams::INIT);
    let (heads, rule) = match ensemble {
        Some(e) => (e.heads, ValueRule::Pessimistic(e.pessimism)),
        None => (cfg.n_critics, ValueRule::Min),
    };
    let mut agent = SacAgent::new(cfg, od, ad, with_mode, heads, rule, &mut init);
    let mut act_rng = guide_core::rng::stream(seed, guide_core::rng::streams::TRAINER);
    let mut update_rng = guide_core::rng::stream(seed, streams::UPDATE);
    let mut replay_rng = guide_core::rng::stream(seed, guide_core::rng::streams::REPLAY);
    let mut boot_rng = guide_core::rng::stream(seed, guide_core::rng::streams::BOOTSTRAP);
    let mut episode_rng = guide_core::rng::stream(seed, streams::EPISODES);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity);
    let mut metrics = Vec::new();
    let mut tracker = EpisodeTracker::default();
    let mut stats = UpdateStats { alpha: agent.alpha(), ..UpdateStats::default() };
    let mut obs = if steps > 0 { Some(env.reset(episode_rng.gen())?) } else { None };
    for t in 0..steps {
        let o = obs.take().expect("observation available between steps");
        let action =
            if t < cfg.warmup_steps { uniform_action(&mut act_rng, ad, with_mode) } else { agent.policy.act(&o, &mut act_rng)? };
        let st = env.step(&action)?;
        let mask = match ensemble {
            Some(e) => bootstrap_mask(&mut boot_rng, e.heads, e.inclusion),
            None => u32::MAX,
        };
        tracker.record(st.base_reward, st.exact_fix);
        let over = st.episode_over();
        let (fraction, next) = (st.completed_fraction, st.obs);
        buffer.push(Transition { obs: o, action, reward: st.reward, next_obs: next.clone(), done: st.terminal, mask });
        if t >= cfg.warmup_steps && buffer.len() >= cfg.batch {
            let batch = buffer.sample(cfg.batch, &mut replay_rng)?;
            stats = agent.update(&batch, t, &mut update_rng)?;
        }
        if over {
            metrics.push(tracker.finish(t + 1, fraction, stats));
            if t + 1 < steps {
                obs = Some(env.reset(episode_rng.gen())?);
            }
        } else {
            obs = Some(next);
        }
    }
    if !agent.policy.net.is_finite() {
        return Err(LearnError::NonFiniteGradient);
    }
    Ok(TrainOutput { policy: agent.policy, metrics, steps })
}
