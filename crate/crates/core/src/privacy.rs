//! Privacy cost, per-user sensitivity weights and the user reward.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::DisclosedData;
use crate::ratio::Ratio;
use crate::seed::{self, Stream};

/// A user population group: label, sensitivity multiplier `w` and the share
/// of users assigned to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub label: String,
    pub w: f64,
    pub share: Ratio,
}

impl GroupSpec {
    pub fn new(label: impl Into<String>, w: f64, share: Ratio) -> Self {
        GroupSpec {
            label: label.into(),
            w,
            share,
        }
    }

    /// Non-sensitive (w = 0), normal (w = 1) and sensitive (w = 10), one
    /// third each.
    pub fn default_groups() -> Vec<GroupSpec> {
        let third = Ratio::new(1, 3).unwrap();
        vec![
            GroupSpec::new("non_sensitive", 0.0, third),
            GroupSpec::new("normal", 1.0, third),
            GroupSpec::new("sensitive", 10.0, third),
        ]
    }
}

pub fn validate_groups(groups: &[GroupSpec]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Config("at least one user group is required".into()));
    }
    let total: f64 = groups.iter().map(|g| g.share.to_f64()).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("group shares sum to {total}, not 1")));
    }
    for g in groups {
        if !(g.w >= 0.0 && g.w.is_finite()) {
            return Err(Error::Config(format!("group {} has invalid w = {}", g.label, g.w)));
        }
        if g.label.is_empty() || g.label == "all" {
            return Err(Error::Config(format!("group label `{}` is reserved or empty", g.label)));
        }
    }
    let mut labels: Vec<&str> = groups.iter().map(|g| g.label.as_str()).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("group labels must be unique".into()));
    }
    Ok(())
}

/// Per-user privacy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub group: usize,
    pub w: f64,
    /// Cost per disclosed attribute.
    pub beta: f64,
    pub lambda: f64,
}

/// Utilities and costs at the two calibration endpoints: full disclosure
/// and no disclosure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBaseline {
    pub u_full: f64,
    pub u_empty: f64,
    pub c_full: f64,
    pub c_empty: f64,
}

/// `beta * |disclosed attributes| + |disclosed behaviors| / pool_len`.
/// `pool_len` counts the disclosable behaviors only; the held-out test item
/// is never part of it.
pub fn privacy_cost(disclosed: &DisclosedData, pool_len: usize, beta: f64) -> f64 {
    debug_assert!(pool_len > 0);
    beta * disclosed.attributes.len() as f64 + disclosed.behaviors.len() as f64 / pool_len as f64
}

/// Exchange rate between privacy cost and utility:
/// `w * (u_full - u_empty) / (c_full - c_empty)`, floored at zero for users
/// whose full-data utility does not beat the empty baseline.
pub fn sensitivity_weight(w: f64, baseline: &CalibrationBaseline) -> f64 {
    let dc = baseline.c_full - baseline.c_empty;
    debug_assert!(dc > 0.0);
    let du = baseline.u_full - baseline.u_empty;
    if du <= 0.0 || w == 0.0 {
        return 0.0;
    }
    w * du / dc
}

pub fn user_reward(utility: f64, cost: f64, lambda: f64) -> f64 {
    utility - lambda * cost
}

/// Seeded shuffle, then contiguous blocks of `floor(share * n)` users per
/// group; whatever the floors leave over goes to the last group. Returns a
/// group index per user position.
pub fn assign_groups(n_users: usize, groups: &[GroupSpec], seed: u64) -> Result<Vec<usize>> {
    if n_users == 0 {
        return Err(Error::Data("cannot assign groups to an empty user list".into()));
    }
    validate_groups(groups)?;
    let mut order: Vec<usize> = (0..n_users).collect();
    order.shuffle(&mut seed::rng(seed, Stream::Groups, 0, 0));

    let mut assignment = vec![groups.len() - 1; n_users];
    let mut cursor = 0;
    for (g, spec) in groups.iter().enumerate().take(groups.len() - 1) {
        let size = spec.share.floor_mul(n_users as u64) as usize;
        for &u in &order[cursor..cursor + size] {
            assignment[u] = g;
        }
        cursor += size;
    }
    Ok(assignment)
}
