//! Per-user epsilon-greedy bandit over a choice space.
//!
//! Exploration does not pick arms uniformly: an arm is drawn with weight
//! `1 / (visits + 1)`, so rarely tried disclosure options come up more
//! often. Estimates are plain running means of the observed rewards.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Exploration rate at epoch `t`: starts at 0.5 and halves every
/// `3 * space_size` epochs.
pub fn epsilon(t: usize, space_size: usize) -> f64 {
    debug_assert!(space_size >= 1);
    0.5f64.powf(1.0 + t as f64 / (3.0 * space_size as f64))
}

/// Probabilities proportional to `1 / (n_k + 1)`.
pub fn exploration_distribution(visits: &[u64]) -> Vec<f64> {
    let weights: Vec<f64> = visits.iter().map(|&n| 1.0 / (n as f64 + 1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Lowest index among the maxima of `q`.
pub fn greedy(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub q: Vec<f64>,
    pub n: Vec<u64>,
    pub last_action: Option<usize>,
}

impl AgentState {
    pub fn new(space_size: usize) -> Self {
        assert!(space_size >= 1, "choice space cannot be empty");
        AgentState {
            q: vec![0.0; space_size],
            n: vec![0; space_size],
            last_action: None,
        }
    }

    pub fn space_size(&self) -> usize {
        self.q.len()
    }

    pub fn greedy_action(&self) -> usize {
        greedy(&self.q)
    }

    /// Chooses an action at epoch `t` with the decaying exploration rate.
    pub fn select_action<R: Rng + ?Sized>(&mut self, t: usize, rng: &mut R) -> usize {
        self.select_with_epsilon(epsilon(t, self.space_size()), rng)
    }

    /// Always consumes exactly two uniform draws, one for the explore coin
    /// and one for the categorical draw, so RNG traces do not depend on
    /// which branch was taken.
    pub fn select_with_epsilon<R: Rng + ?Sized>(&mut self, eps: f64, rng: &mut R) -> usize {
        let coin: f64 = rng.random();
        let pick: f64 = rng.random();
        let action = if coin < eps {
            sample_categorical(&exploration_distribution(&self.n), pick)
        } else {
            self.greedy_action()
        };
        self.last_action = Some(action);
        action
    }

    /// Counts the visit, then moves the estimate by `(reward - q) / n`.
    pub fn update(&mut self, action: usize, reward: f64) {
        debug_assert!(reward.is_finite());
        self.n[action] += 1;
        self.q[action] += (reward - self.q[action]) / self.n[action] as f64;
    }
}

fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
