//! First-order Markov chain over consecutive disclosed behaviors, smoothed
//! additively and mixed with global popularity.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::popularity::item_counts;
use super::DisclosedDataset;
use crate::error::{Error, Result};
use crate::mechanism::DisclosedData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarkovConfig {
    /// Additive smoothing per transition cell.
    pub smoothing: f64,
    /// Weight of the popularity distribution in the mixture.
    pub backoff: f64,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        MarkovConfig {
            smoothing: 0.1,
            backoff: 0.3,
        }
    }
}

impl MarkovConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing > 0.0) || !(0.0..=1.0).contains(&self.backoff) {
            return Err(Error::Config(format!(
                "markov smoothing must be positive and backoff in [0, 1], got {} and {}",
                self.smoothing, self.backoff
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovModel {
    config: MarkovConfig,
    /// Sparse successor counts per source item, sorted by successor.
    transitions: Vec<Vec<(u32, u32)>>,
    row_totals: Vec<u32>,
    popularity: Vec<u32>,
}

impl MarkovModel {
    pub fn fit(data: &DisclosedDataset, config: &MarkovConfig) -> Result<Self> {
        config.validate()?;
        let mut pairs: Vec<(u32, u32)> = data
            .users
            .iter()
            .flat_map(|u| u.behaviors.windows(2).map(|w| (w[0], w[1])))
            .collect();
        pairs.sort_unstable();

        let mut transitions = vec![Vec::new(); data.n_items];
        let mut row_totals = vec![0u32; data.n_items];
        for chunk in pairs.chunk_by(|a, b| a == b) {
            let (from, to) = chunk[0];
            transitions[from as usize].push((to, chunk.len() as u32));
            row_totals[from as usize] += chunk.len() as u32;
        }
        Ok(MarkovModel {
            config: config.clone(),
            transitions,
            row_totals,
            popularity: item_counts(data),
        })
    }

    pub fn n_items(&self) -> usize {
        self.popularity.len()
    }

    pub fn transition_count(&self, from: u32, to: u32) -> u32 {
        let row = &self.transitions[from as usize];
        row.binary_search_by_key(&to, |&(t, _)| t).map_or(0, |k| row[k].1)
    }

    pub(super) fn score_into(&self, history: &DisclosedData, out: &mut [f64]) {
        let n = self.n_items() as f64;
        let total_pop: u64 = self.popularity.iter().map(|&c| c as u64).sum();
        let pop = |i: usize| {
            if total_pop == 0 {
                1.0 / n
            } else {
                self.popularity[i] as f64 / total_pop as f64
            }
        };
        let Some(&last) = history.behaviors.last() else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = pop(i);
            }
            return;
        };
        let MarkovConfig { smoothing, backoff } = self.config;
        let denom = self.row_totals[last as usize] as f64 + smoothing * n;
        let base = (1.0 - backoff) * smoothing / denom;
        for (i, o) in out.iter_mut().enumerate() {
            *o = base + backoff * pop(i);
        }
        for &(to, c) in &self.transitions[last as usize] {
            out[to as usize] += (1.0 - backoff) * c as f64 / denom;
        }
    }

    pub(super) fn hash_into(&self, h: &mut Sha256) {
        for (from, row) in self.transitions.iter().enumerate() {
            for &(to, c) in row {
                h.update((from as u32).to_le_bytes());
                h.update(to.to_le_bytes());
                h.update(c.to_le_bytes());
            }
        }
        for c in &self.popularity {
            h.update(c.to_le_bytes());
        }
    }
}
