use rand::Rng;
use serde::{Deserialize, Serialize};

use super::qnet::QNetwork;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO experience store.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self { capacity, items: Vec::with_capacity(capacity), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Append, evicting the oldest transition once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform indices, with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(params: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; params], v: vec![0.0; params] }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// When the frozen target network is refreshed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncUnit {
    TrainSteps,
    Dialogues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub gamma: f64,
    pub sync_every: usize,
    pub sync_unit: SyncUnit,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of training dialogues over which ε is annealed.
    pub anneal_fraction: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: 40,
            learning_rate: 1e-3,
            batch_size: 32,
            replay_capacity: 2000,
            gamma: 0.99,
            sync_every: 100,
            sync_unit: SyncUnit::TrainSteps,
            epsilon_start: 0.95,
            epsilon_end: 0.05,
            anneal_fraction: 0.6,
        }
    }
}

impl DqnConfig {
    /// Linear annealing from `epsilon_start` to `epsilon_end`, then held.
    pub fn epsilon(&self, dialogue: usize, total: usize) -> f64 {
        let span = self.anneal_fraction * total as f64;
        if span <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (dialogue as f64 / span).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// `y = r` for terminal transitions, else `r + γ·max_a Q_target(s′, a)`.
pub fn td_targets(batch: &[&Transition], target: &QNetwork, gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|t| if t.terminal { t.reward } else { t.reward + gamma * target.max_q(&t.next_state) })
        .collect()
}

/// ε-greedy; greedy ties go to the lowest index.
pub fn select_action(q: &[f64], epsilon: f64, rng: &mut impl Rng) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return rng.random_range(0..q.len());
    }
    argmax(q)
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate() {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStep {
    pub loss: f64,
}

/// One minibatch Adam update of `online` against the frozen `target`.
/// Returns `None` without touching anything while the buffer holds fewer
/// than `batch_size` transitions.
pub fn train_step(
    online: &mut QNetwork,
    target: &QNetwork,
    adam: &mut AdamState,
    buffer: &ReplayBuffer,
    batch_size: usize,
    gamma: f64,
    rng: &mut impl Rng,
) -> Option<TrainStep> {
    if buffer.len() < batch_size || batch_size == 0 {
        return None;
    }
    let batch: Vec<&Transition> = buffer.sample_indices(batch_size, rng).into_iter().map(|i| buffer.get(i)).collect();
    let targets = td_targets(&batch, target, gamma);
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
    let (loss, grad) = online.loss_and_gradient(&states, &actions, &targets);
    adam.update(online.params_mut(), &grad);
    Some(TrainStep { loss })
}
