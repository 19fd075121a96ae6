//! Uniform-sampling FIFO replay buffer.

use rand::Rng;

use crate::LearnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Policy-space action.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// True when the episode ended in a terminal state (no bootstrapping).
    pub done: bool,
    /// Bit `k` set when bootstrap head `k` trains on this transition.
    pub mask: u32,
}

/// Column-major view of a sampled batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub obs_dim: usize,
    pub act_width: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub dones: Vec<bool>,
    pub masks: Vec<u32>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self, LearnError> {
        let first = items.first().ok_or_else(|| LearnError::ShapeMismatch("empty batch".into()))?;
        let (obs_dim, act_width) = (first.obs.len(), first.action.len());
        let mut b = Batch {
            len: items.len(),
            obs_dim,
            act_width,
            obs: Vec::with_capacity(items.len() * obs_dim),
            actions: Vec::with_capacity(items.len() * act_width),
            rewards: Vec::with_capacity(items.len()),
            next_obs: Vec::with_capacity(items.len() * obs_dim),
            dones: Vec::with_capacity(items.len()),
            masks: Vec::with_capacity(items.len()),
        };
        for t in items {
            if t.obs.len() != obs_dim || t.next_obs.len() != obs_dim || t.action.len() != act_width {
                return Err(LearnError::ShapeMismatch("transitions of different shapes in one batch".into()));
            }
            b.obs.extend_from_slice(&t.obs);
            b.actions.extend_from_slice(&t.action);
            b.rewards.push(t.reward);
            b.next_obs.extend_from_slice(&t.next_obs);
            b.dones.push(t.done);
            b.masks.push(t.mask);
        }
        Ok(b)
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Slot the next insertion overwrites once full.
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), next: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored transitions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `batch` transitions drawn uniformly with replacement.
    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Batch, LearnError> {
        if batch == 0 || self.items.len() < batch {
            return Err(LearnError::InsufficientData { have: self.items.len(), need: batch });
        }
        let picks: Vec<&Transition> = (0..batch).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect();
        Batch::from_transitions(&picks)
    }
}

/// Inclusion mask over `heads` bootstrap heads, each bit set with
/// probability `p`; all-zero draws are redrawn so every transition trains
/// at least one head.
pub fn bootstrap_mask(rng: &mut impl Rng, heads: usize, p: f64) -> u32 {
    assert!((1..=32).contains(&heads), "between 1 and 32 bootstrap heads supported");
    loop {
        let mut m = 0u32;
        for k in 0..heads {
            if rng.gen_bool(p) {
                m |= 1 << k;
            }
        }
        if m != 0 {
            return m;
        }
    }
}
