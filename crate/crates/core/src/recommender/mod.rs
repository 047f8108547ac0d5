//! Recommenders retrained from scratch every epoch on the disclosed union.
//!
//! Three models of increasing strength on sequential data are provided:
//! global popularity, BPR matrix factorization and a smoothed first-order
//! Markov chain. All of them rank users who disclosed nothing by global
//! popularity of the disclosed data.

mod markov;
mod mf;
mod popularity;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use markov::{MarkovConfig, MarkovModel};
pub use mf::{pair_gradient, pair_loss, MfConfig, MfModel, PairParams};
pub use popularity::PopularityModel;

use crate::dataset::ItemIdx;
use crate::error::{Error, Result};
use crate::mechanism::DisclosedData;

/// Everything every user disclosed in one epoch over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct DisclosedDataset {
    pub n_items: usize,
    pub n_features: usize,
    /// Indexed by user position; non-disclosing users are present with
    /// empty data.
    pub users: Vec<DisclosedData>,
}

impl DisclosedDataset {
    pub fn interaction_count(&self) -> usize {
        self.users.iter().map(|u| u.behaviors.len()).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.n_items == 0 {
            return Err(Error::Data("item vocabulary is empty".into()));
        }
        for (u, d) in self.users.iter().enumerate() {
            if d.behaviors.iter().any(|&i| i as usize >= self.n_items) {
                return Err(Error::Data(format!("user {u} disclosed an item outside the vocabulary")));
            }
            if d.attributes.iter().any(|&f| f as usize >= self.n_features) {
                return Err(Error::Data(format!("user {u} disclosed an unknown attribute feature")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Popularity,
    Mf(MfConfig),
    Markov(MarkovConfig),
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Popularity => Ok(()),
            ModelSpec::Mf(c) => c.validate(),
            ModelSpec::Markov(c) => c.validate(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Popularity => "popularity",
            ModelSpec::Mf(_) => "mf",
            ModelSpec::Markov(_) => "markov",
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    /// Model kind with default hyperparameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "popularity" | "pop" => Ok(ModelSpec::Popularity),
            "mf" | "matrix_factorization" => Ok(ModelSpec::Mf(MfConfig::default())),
            "markov" => Ok(ModelSpec::Markov(MarkovConfig::default())),
            other => Err(Error::Config(format!(
                "unknown model `{other}` (expected popularity, mf or markov)"
            ))),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Popularity(PopularityModel),
    Mf(MfModel),
    Markov(MarkovModel),
}

/// Fits a fresh model. Only `data` is read, so anything a user kept back
/// cannot influence the result.
pub fn train(data: &DisclosedDataset, spec: &ModelSpec, seed: u64) -> Result<Model> {
    data.validate()?;
    if data.interaction_count() == 0 {
        log::warn!("no behaviors were disclosed; falling back to a uniform popularity model");
        return Ok(Model::Popularity(PopularityModel::uniform(data.n_items)));
    }
    Ok(match spec {
        ModelSpec::Popularity => Model::Popularity(PopularityModel::fit(data)),
        ModelSpec::Mf(cfg) => Model::Mf(MfModel::fit(data, cfg, seed)?),
        ModelSpec::Markov(cfg) => Model::Markov(MarkovModel::fit(data, cfg)?),
    })
}

impl Model {
    pub fn n_items(&self) -> usize {
        match self {
            Model::Popularity(m) => m.n_items(),
            Model::Mf(m) => m.n_items(),
            Model::Markov(m) => m.n_items(),
        }
    }

    /// Writes a score for every vocabulary item into `out`; higher is
    /// better.
    pub fn score_into(&self, user: usize, history: &DisclosedData, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.n_items(), 0.0);
        match self {
            Model::Popularity(m) => m.score_into(out),
            Model::Mf(m) => m.score_into(user, history, out),
            Model::Markov(m) => m.score_into(history, out),
        }
    }

    /// Orders `candidates` best first, ties broken by ascending item index.
    pub fn rank(&self, user: usize, history: &DisclosedData, candidates: &[ItemIdx]) -> Vec<ItemIdx> {
        let mut scores = Vec::new();
        self.score_into(user, history, &mut scores);
        let mut ranked = candidates.to_vec();
        ranked.sort_by(|&a, &b| {
            scores[b as usize]
                .total_cmp(&scores[a as usize])
                .then(a.cmp(&b))
        });
        ranked.dedup();
        ranked
    }

    /// SHA-256 over the exact bit patterns of every learned parameter.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        match self {
            Model::Popularity(m) => {
                h.update(b"popularity");
                m.hash_into(&mut h);
            }
            Model::Mf(m) => {
                h.update(b"mf");
                m.hash_into(&mut h);
            }
            Model::Markov(m) => {
                h.update(b"markov");
                m.hash_into(&mut h);
            }
        }
        hex::encode(h.finalize())
    }
}
