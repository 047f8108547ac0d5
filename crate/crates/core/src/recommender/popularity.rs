use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DisclosedDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityModel {
    counts: Vec<u32>,
}

impl PopularityModel {
    pub fn fit(data: &DisclosedDataset) -> Self {
        PopularityModel {
            counts: item_counts(data),
        }
    }

    pub fn uniform(n_items: usize) -> Self {
        PopularityModel {
            counts: vec![1; n_items],
        }
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        PopularityModel { counts }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n_items(&self) -> usize {
        self.counts.len()
    }

    pub(super) fn score_into(&self, out: &mut [f64]) {
        for (o, &c) in out.iter_mut().zip(&self.counts) {
            *o = c as f64;
        }
    }

    pub(super) fn hash_into(&self, h: &mut Sha256) {
        for c in &self.counts {
            h.update(c.to_le_bytes());
        }
    }
}

pub(super) fn item_counts(data: &DisclosedDataset) -> Vec<u32> {
    let mut counts = vec![0u32; data.n_items];
    for u in &data.users {
        for &i in &u.behaviors {
            counts[i as usize] += 1;
        }
    }
    counts
}
