//! Leave-one-out utility per user and per-group epoch statistics.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{EvalSplit, ItemIdx};
use crate::error::{Error, Result};
use crate::mechanism::DisclosedData;
use crate::recommender::Model;
use crate::seed::{self, Stream};

/// NDCG@k for a single relevant item at 1-based `position`.
pub fn ndcg_at_k(position: usize, k: usize) -> f64 {
    debug_assert!(position >= 1 && k >= 1);
    if position <= k {
        1.0 / ((position + 1) as f64).log2()
    } else {
        0.0
    }
}

/// Candidate set used when ranking the held-out item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalMode {
    /// Every vocabulary item.
    Full,
    /// The test item plus `negatives` uniformly drawn items. The draw for a
    /// user is the same in every epoch.
    Sampled { negatives: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub mode: EvalMode,
    pub k: usize,
    /// Drop the user's disclosed items from the candidates.
    pub filter_seen: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: EvalMode::Full,
            k: 100,
            filter_seen: true,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self, n_items: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("eval k must be at least 1".into()));
        }
        if let EvalMode::Sampled { negatives, .. } = self.mode {
            if negatives >= n_items {
                return Err(Error::Config(format!(
                    "{negatives} sampled negatives need a vocabulary larger than {n_items} items"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub group: usize,
    pub ndcg: f64,
    /// Disclosed behaviors over the disclosable pool.
    pub disclosed_fraction: f64,
    pub disclosed_any: bool,
    pub reward: f64,
}

/// 1-based position of `test_item` when `candidates` are sorted by
/// descending score, ties by ascending item index.
pub fn position_of(scores: &[f64], candidates: &[ItemIdx], test_item: ItemIdx) -> Result<usize> {
    if !candidates.contains(&test_item) {
        return Err(Error::Eval(format!("test item {test_item} is missing from the candidate set")));
    }
    let t = scores[test_item as usize];
    let ahead = candidates
        .iter()
        .filter(|&&c| {
            c != test_item && scores[c as usize].total_cmp(&t).then(test_item.cmp(&c)).is_gt()
        })
        .count();
    Ok(ahead + 1)
}

/// Reusable scoring buffers around one trained model.
pub struct Evaluator<'a> {
    model: &'a Model,
    options: &'a EvalOptions,
    scores: Vec<f64>,
    excluded: Vec<bool>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a Model, options: &'a EvalOptions) -> Result<Self> {
        options.validate(model.n_items())?;
        Ok(Evaluator {
            model,
            options,
            scores: Vec::with_capacity(model.n_items()),
            excluded: vec![false; model.n_items()],
        })
    }

    /// The candidate set for one user. The test item is always included.
    pub fn candidates(&mut self, user: usize, disclosed: &DisclosedData, test_item: ItemIdx) -> Result<Vec<ItemIdx>> {
        let n = self.model.n_items();
        if test_item as usize >= n {
            return Err(Error::Eval(format!("test item {test_item} is outside the vocabulary")));
        }
        self.excluded.fill(false);
        if self.options.filter_seen {
            for &i in &disclosed.behaviors {
                self.excluded[i as usize] = true;
            }
        }
        self.excluded[test_item as usize] = true;
        let mut pool: Vec<ItemIdx> = (0..n as ItemIdx).filter(|&i| !self.excluded[i as usize]).collect();
        if let EvalMode::Sampled { negatives, seed } = self.options.mode {
            if negatives < pool.len() {
                let mut rng = seed::rng(seed, Stream::Eval, user as u64, 0);
                let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), negatives).into_vec();
                picked.sort_unstable();
                pool = picked.into_iter().map(|k| pool[k]).collect();
            }
        }
        pool.push(test_item);
        Ok(pool)
    }

    pub fn ndcg(&mut self, user: usize, disclosed: &DisclosedData, test_item: ItemIdx) -> Result<f64> {
        let candidates = self.candidates(user, disclosed, test_item)?;
        self.model.score_into(user, disclosed, &mut self.scores);
        let pos = position_of(&self.scores, &candidates, test_item)?;
        Ok(ndcg_at_k(pos, self.options.k))
    }

    /// Utility plus disclosure statistics; `reward` is left at the utility
    /// and overwritten by the caller once the privacy cost is known.
    pub fn evaluate(
        &mut self,
        user: usize,
        group: usize,
        disclosed: &DisclosedData,
        split: &EvalSplit,
    ) -> Result<UtilityReport> {
        let ndcg = self.ndcg(user, disclosed, split.test_item)?;
        Ok(UtilityReport {
            group,
            ndcg,
            disclosed_fraction: disclosed.behaviors.len() as f64 / split.train_pool.len() as f64,
            disclosed_any: !disclosed.is_empty(),
            reward: ndcg,
        })
    }
}

pub fn evaluate_user(
    model: &Model,
    user: usize,
    group: usize,
    disclosed: &DisclosedData,
    split: &EvalSplit,
    options: &EvalOptions,
) -> Result<UtilityReport> {
    Evaluator::new(model, options)?.evaluate(user, group, disclosed, split)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: String,
    pub users: usize,
    pub mean_ndcg: f64,
    pub mean_dis_frac: f64,
    pub pct_users_disclosing: f64,
    pub mean_reward: f64,
    /// Sum of the group's utilities.
    pub platform_revenue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// One entry per non-empty group in configuration order, then `all`.
    pub groups: Vec<GroupMetrics>,
}

impl EpochMetrics {
    pub fn overall(&self) -> &GroupMetrics {
        self.groups.last().expect("metrics always carry an overall row")
    }

    pub fn group(&self, label: &str) -> Option<&GroupMetrics> {
        self.groups.iter().find(|g| g.group == label)
    }
}

pub const OVERALL: &str = "all";

#[derive(Default)]
struct Acc {
    users: usize,
    ndcg: f64,
    dis_frac: f64,
    disclosing: usize,
    reward: f64,
}

impl Acc {
    fn add(&mut self, r: &UtilityReport) {
        self.users += 1;
        self.ndcg += r.ndcg;
        self.dis_frac += r.disclosed_fraction;
        self.disclosing += r.disclosed_any as usize;
        self.reward += r.reward;
    }

    fn finish(&self, label: &str) -> GroupMetrics {
        let n = self.users as f64;
        GroupMetrics {
            group: label.to_string(),
            users: self.users,
            mean_ndcg: self.ndcg / n,
            mean_dis_frac: self.dis_frac / n,
            pct_users_disclosing: 100.0 * self.disclosing as f64 / n,
            mean_reward: self.reward / n,
            platform_revenue: self.ndcg,
        }
    }
}

/// Folds the reports in user order. Groups nobody was assigned to are
/// omitted.
pub fn aggregate(epoch: usize, reports: &[UtilityReport], labels: &[String]) -> Result<EpochMetrics> {
    if reports.is_empty() {
        return Err(Error::Eval("no user reports to aggregate".into()));
    }
    let mut per_group: Vec<Acc> = labels.iter().map(|_| Acc::default()).collect();
    let mut all = Acc::default();
    for r in reports {
        per_group
            .get_mut(r.group)
            .ok_or_else(|| Error::Eval(format!("report references unknown group {}", r.group)))?
            .add(r);
        all.add(r);
    }
    let mut groups: Vec<GroupMetrics> = per_group
        .iter()
        .zip(labels)
        .filter(|(a, _)| a.users > 0)
        .map(|(a, l)| a.finish(l))
        .collect();
    groups.push(all.finish(OVERALL));
    Ok(EpochMetrics { epoch, groups })
}
