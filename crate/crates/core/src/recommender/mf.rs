//! Implicit-feedback matrix factorization trained with the pairwise BPR
//! loss and uniformly sampled negatives.
//!
//! A user's representation is their own factor vector plus the mean of the
//! factor vectors of any profile attributes they disclosed. Scores are
//! `<user, item> + item_bias`. When a user disclosed at least two
//! behaviors the last one is held back as a validation item, and training
//! stops early once validation NDCG stops improving.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::popularity::item_counts;
use super::DisclosedDataset;
use crate::error::{Error, Result};
use crate::eval::ndcg_at_k;
use crate::mechanism::DisclosedData;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfConfig {
    pub dim: usize,
    pub learning_rate: f32,
    /// Upper bound on passes over the training pairs.
    pub epochs: usize,
    /// Negatives sampled per positive pair.
    pub negatives: usize,
    pub l2: f32,
    /// Half-width of the uniform initialization range.
    pub init_scale: f32,
    pub early_stopping: bool,
    /// Passes without validation improvement before stopping.
    pub patience: usize,
    pub validation_k: usize,
}

impl Default for MfConfig {
    fn default() -> Self {
        MfConfig {
            dim: 32,
            learning_rate: 0.05,
            epochs: 30,
            negatives: 8,
            l2: 0.005,
            init_scale: 0.1,
            early_stopping: true,
            patience: 3,
            validation_k: 100,
        }
    }
}

impl MfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.epochs == 0 || self.negatives == 0 || self.validation_k == 0 {
            return Err(Error::Config("mf dim, epochs, negatives and validation_k must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) || !(self.init_scale >= 0.0) {
            return Err(Error::Config("mf learning_rate must be positive and l2, init_scale nonnegative".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    acc.iter().sum::<f32>() + tail
}

/// Parameters touched by one (user, positive, negative) triple, in f64 for
/// reference computations.
#[derive(Debug, Clone, PartialEq)]
pub struct PairParams {
    pub user: Vec<f64>,
    pub attrs: Vec<Vec<f64>>,
    pub pos: Vec<f64>,
    pub neg: Vec<f64>,
    pub pos_bias: f64,
    pub neg_bias: f64,
}

impl PairParams {
    fn margin(&self) -> f64 {
        let r = self.representation();
        r.iter().zip(self.pos.iter().zip(&self.neg)).map(|(r, (p, n))| r * (p - n)).sum::<f64>() + self.pos_bias
            - self.neg_bias
    }

    fn representation(&self) -> Vec<f64> {
        let mut r = self.user.clone();
        if !self.attrs.is_empty() {
            let scale = 1.0 / self.attrs.len() as f64;
            for a in &self.attrs {
                for (rk, ak) in r.iter_mut().zip(a) {
                    *rk += ak * scale;
                }
            }
        }
        r
    }

    fn sq_norm(&self) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        sq(&self.user)
            + self.attrs.iter().map(|a| sq(a)).sum::<f64>()
            + sq(&self.pos)
            + sq(&self.neg)
            + self.pos_bias * self.pos_bias
            + self.neg_bias * self.neg_bias
    }
}

/// `-ln sigmoid(margin) + l2/2 * ||params||^2` for one triple, where the
/// struct holds parameter values.
pub fn pair_loss(params: &PairParams, l2: f64) -> f64 {
    -sigmoid(params.margin()).ln() + 0.5 * l2 * params.sq_norm()
}

/// Analytic gradient of [`pair_loss`] with respect to every parameter.
pub fn pair_gradient(params: &PairParams, l2: f64) -> PairParams {
    let g = sigmoid(-params.margin());
    let r = params.representation();
    let diff: Vec<f64> = params.pos.iter().zip(&params.neg).map(|(p, n)| p - n).collect();
    let a_scale = if params.attrs.is_empty() {
        0.0
    } else {
        1.0 / params.attrs.len() as f64
    };
    PairParams {
        user: diff.iter().zip(&params.user).map(|(d, u)| -g * d + l2 * u).collect(),
        attrs: params
            .attrs
            .iter()
            .map(|a| diff.iter().zip(a).map(|(d, ak)| -g * d * a_scale + l2 * ak).collect())
            .collect(),
        pos: r.iter().zip(&params.pos).map(|(rk, p)| -g * rk + l2 * p).collect(),
        neg: r.iter().zip(&params.neg).map(|(rk, n)| g * rk + l2 * n).collect(),
        pos_bias: -g + l2 * params.pos_bias,
        neg_bias: g + l2 * params.neg_bias,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Factors {
    dim: usize,
    user: Vec<f32>,
    item: Vec<f32>,
    bias: Vec<f32>,
    attr: Vec<f32>,
}

impl Factors {
    fn row(v: &[f32], dim: usize, idx: usize) -> &[f32] {
        &v[idx * dim..(idx + 1) * dim]
    }

    /// Writes the user representation into `r`.
    fn representation(&self, user: Option<usize>, attrs: &[u32], r: &mut [f32]) {
        let d = self.dim;
        match user {
            Some(u) => r.copy_from_slice(Self::row(&self.user, d, u)),
            None => r.fill(0.0),
        }
        if !attrs.is_empty() {
            let scale = 1.0 / attrs.len() as f32;
            for &f in attrs {
                for (rk, ak) in r.iter_mut().zip(Self::row(&self.attr, d, f as usize)) {
                    *rk += ak * scale;
                }
            }
        }
    }

    fn sgd_pair(&mut self, u: usize, attrs: &[u32], i: usize, j: usize, lr: f32, l2: f32, r: &mut [f32]) {
        let d = self.dim;
        self.representation(Some(u), attrs, r);
        let (qi, qj) = (Self::row(&self.item, d, i), Self::row(&self.item, d, j));
        let margin = dot(r, qi) - dot(r, qj) + self.bias[i] - self.bias[j];
        let g = sigmoid(-(margin as f64)) as f32;
        let a_scale = if attrs.is_empty() { 0.0 } else { 1.0 / attrs.len() as f32 };
        for k in 0..d {
            let (qik, qjk, rk) = (self.item[i * d + k], self.item[j * d + k], r[k]);
            let diff = qik - qjk;
            self.item[i * d + k] = qik - lr * (-g * rk + l2 * qik);
            self.item[j * d + k] = qjk - lr * (g * rk + l2 * qjk);
            let pu = self.user[u * d + k];
            self.user[u * d + k] = pu - lr * (-g * diff + l2 * pu);
            for &f in attrs {
                let idx = f as usize * d + k;
                let ak = self.attr[idx];
                self.attr[idx] = ak - lr * (-g * diff * a_scale + l2 * ak);
            }
        }
        let (bi, bj) = (self.bias[i], self.bias[j]);
        self.bias[i] = bi - lr * (-g + l2 * bi);
        self.bias[j] = bj - lr * (g + l2 * bj);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    factors: Factors,
    /// Users that had training pairs; others have no own factor vector.
    trained_users: Vec<bool>,
    popularity: Vec<u32>,
    epochs_run: usize,
}

struct UserTrainData {
    positives: Vec<Vec<u32>>,
    validation: Vec<Option<u32>>,
}

fn split_for_training(data: &DisclosedDataset, early_stopping: bool) -> UserTrainData {
    let mut positives = Vec::with_capacity(data.users.len());
    let mut validation = Vec::with_capacity(data.users.len());
    for u in &data.users {
        let b = &u.behaviors;
        let (train, val) = if early_stopping && b.len() >= 2 {
            (&b[..b.len() - 1], Some(b[b.len() - 1]))
        } else {
            (&b[..], None)
        };
        positives.push(train.to_vec());
        validation.push(val);
    }
    UserTrainData { positives, validation }
}

impl MfModel {
    pub fn fit(data: &DisclosedDataset, cfg: &MfConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (n_users, n_items, d) = (data.users.len(), data.n_items, cfg.dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let split = split_for_training(data, cfg.early_stopping);

        let trained_users: Vec<bool> = split.positives.iter().map(|p| !p.is_empty()).collect();
        let mut init = |n: usize| -> Vec<f32> {
            (0..n).map(|_| rng.random_range(-1.0f32..=1.0) * cfg.init_scale).collect()
        };
        let mut user = init(n_users * d);
        for (u, active) in trained_users.iter().enumerate() {
            if !active {
                user[u * d..(u + 1) * d].fill(0.0);
            }
        }
        let mut factors = Factors {
            dim: d,
            user,
            item: init(n_items * d),
            bias: vec![0.0; n_items],
            attr: init(data.n_features * d),
        };

        let sorted_pos: Vec<Vec<u32>> = split
            .positives
            .iter()
            .map(|p| {
                let mut s = p.clone();
                s.sort_unstable();
                s.dedup();
                s
            })
            .collect();
        let mut pairs: Vec<(u32, u32)> = split
            .positives
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u as u32, i)))
            .collect();
        let has_validation = split.validation.iter().any(Option::is_some);

        let mut r = vec![0f32; d];
        let mut best: Option<(f64, Factors, usize)> = None;
        let mut since_best = 0;
        let mut epochs_run = 0;
        for epoch in 0..cfg.epochs {
            pairs.shuffle(&mut rng);
            for &(u, i) in &pairs {
                let (u, i) = (u as usize, i as usize);
                let pos = &sorted_pos[u];
                if pos.len() >= n_items {
                    continue;
                }
                for _ in 0..cfg.negatives {
                    let j = loop {
                        let j = rng.random_range(0..n_items as u32);
                        if pos.binary_search(&j).is_err() {
                            break j as usize;
                        }
                    };
                    factors.sgd_pair(u, &data.users[u].attributes, i, j, cfg.learning_rate, cfg.l2, &mut r);
                }
            }
            epochs_run = epoch + 1;

            if cfg.early_stopping && has_validation {
                let score = validation_ndcg(&factors, data, &split.validation, &sorted_pos, cfg.validation_k);
                match &best {
                    Some((b, _, _)) if score <= *b => {
                        since_best += 1;
                        if since_best >= cfg.patience {
                            break;
                        }
                    }
                    _ => {
                        best = Some((score, factors.clone(), epochs_run));
                        since_best = 0;
                    }
                }
            }
        }
        if let Some((_, f, e)) = best {
            factors = f;
            epochs_run = e;
        }

        Ok(MfModel {
            factors,
            trained_users,
            popularity: item_counts(data),
            epochs_run,
        })
    }

    pub fn n_items(&self) -> usize {
        self.popularity.len()
    }

    /// Training passes behind the kept parameters.
    pub fn epochs_run(&self) -> usize {
        self.epochs_run
    }

    pub(super) fn score_into(&self, user: usize, history: &DisclosedData, out: &mut [f64]) {
        if history.behaviors.is_empty() && history.attributes.is_empty() {
            for (o, &c) in out.iter_mut().zip(&self.popularity) {
                *o = c as f64;
            }
            return;
        }
        let own = (!history.behaviors.is_empty() && self.trained_users.get(user).copied().unwrap_or(false))
            .then_some(user);
        let d = self.factors.dim;
        let mut r = vec![0f32; d];
        self.factors.representation(own, &history.attributes, &mut r);
        for (i, o) in out.iter_mut().enumerate() {
            *o = (dot(&r, Factors::row(&self.factors.item, d, i)) + self.factors.bias[i]) as f64;
        }
    }

    pub(super) fn hash_into(&self, h: &mut Sha256) {
        let f = &self.factors;
        for v in [&f.user, &f.item, &f.bias, &f.attr] {
            for x in v.iter() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
    }
}

fn validation_ndcg(
    factors: &Factors,
    data: &DisclosedDataset,
    validation: &[Option<u32>],
    sorted_pos: &[Vec<u32>],
    k: usize,
) -> f64 {
    let d = factors.dim;
    let mut r = vec![0f32; d];
    let mut scores = vec![0f32; data.n_items];
    let (mut total, mut count) = (0.0, 0usize);
    for (u, val) in validation.iter().enumerate() {
        let Some(v) = *val else { continue };
        factors.representation(Some(u), &data.users[u].attributes, &mut r);
        for (i, s) in scores.iter_mut().enumerate() {
            *s = dot(&r, Factors::row(&factors.item, d, i)) + factors.bias[i];
        }
        let target = scores[v as usize];
        let seen = &sorted_pos[u];
        let mut position = 1;
        for (i, &s) in scores.iter().enumerate() {
            let i = i as u32;
            if i == v || seen.binary_search(&i).is_ok() {
                continue;
            }
            if s > target || (s == target && i < v) {
                position += 1;
            }
        }
        total += ndcg_at_k(position, k);
        count += 1;
    }
    total / count.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommender::{train, Model, ModelSpec};

    fn user(items: &[u32]) -> DisclosedData {
        DisclosedData {
            attributes: vec![],
            behaviors: items.to_vec(),
            source_choice: None,
        }
    }

    fn random_params(seed: u64, dim: usize, n_attrs: usize) -> PairParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        PairParams {
            user: v(dim),
            attrs: (0..n_attrs).map(|_| v(dim)).collect(),
            pos: v(dim),
            neg: v(dim),
            pos_bias: v(1)[0],
            neg_bias: v(1)[0],
        }
    }

    fn flatten(p: &PairParams) -> Vec<f64> {
        let mut out = p.user.clone();
        for a in &p.attrs {
            out.extend(a);
        }
        out.extend(&p.pos);
        out.extend(&p.neg);
        out.push(p.pos_bias);
        out.push(p.neg_bias);
        out
    }

    fn unflatten(template: &PairParams, flat: &[f64]) -> PairParams {
        let d = template.user.len();
        let mut it = flat.iter().copied();
        let mut take = |n: usize| (&mut it).take(n).collect::<Vec<f64>>();
        PairParams {
            user: take(d),
            attrs: template.attrs.iter().map(|_| take(d)).collect(),
            pos: take(d),
            neg: take(d),
            pos_bias: take(1)[0],
            neg_bias: take(1)[0],
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..20 {
            let params = random_params(seed, 5, (seed % 3) as usize);
            let l2 = 0.01;
            let analytic = flatten(&pair_gradient(&params, l2));
            let flat = flatten(&params);
            let h = 1e-6;
            for (k, &g) in analytic.iter().enumerate() {
                let mut plus = flat.clone();
                let mut minus = flat.clone();
                plus[k] += h;
                minus[k] -= h;
                let numeric =
                    (pair_loss(&unflatten(&params, &plus), l2) - pair_loss(&unflatten(&params, &minus), l2)) / (2.0 * h);
                let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-4 || (g - numeric).abs() < 1e-9, "seed {seed} k {k}: {g} vs {numeric}");
            }
        }
    }

    #[test]
    fn sgd_step_follows_the_analytic_gradient() {
        let (d, lr, l2) = (4, 0.1f32, 0.01f32);
        let reference = random_params(3, d, 2);
        let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
        let mut f = Factors {
            dim: d,
            user: to32(&reference.user),
            item: [to32(&reference.pos), to32(&reference.neg)].concat(),
            bias: vec![reference.pos_bias as f32, reference.neg_bias as f32],
            attr: reference.attrs.iter().flat_map(|a| to32(a)).collect(),
        };
        // Round the reference to f32 precision so both sides start equal.
        let start = unflatten(&reference, &flatten(&reference).iter().map(|&x| x as f32 as f64).collect::<Vec<_>>());
        let grad = pair_gradient(&start, l2 as f64);
        let mut r = vec![0f32; d];
        f.sgd_pair(0, &[0, 1], 0, 1, lr, l2, &mut r);
        let expected: Vec<f64> = flatten(&start).iter().zip(flatten(&grad)).map(|(p, g)| p - lr as f64 * g).collect();
        let got = flatten(&PairParams {
            user: f.user.iter().map(|&x| x as f64).collect(),
            attrs: f.attr.chunks(d).map(|c| c.iter().map(|&x| x as f64).collect()).collect(),
            pos: f.item[..d].iter().map(|&x| x as f64).collect(),
            neg: f.item[d..].iter().map(|&x| x as f64).collect(),
            pos_bias: f.bias[0] as f64,
            neg_bias: f.bias[1] as f64,
        });
        for (a, b) in expected.iter().zip(&got) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    fn toy() -> DisclosedDataset {
        DisclosedDataset {
            n_items: 6,
            n_features: 0,
            users: vec![user(&[0, 1, 2]), user(&[1, 2]), user(&[3, 4]), user(&[4, 5, 3]), user(&[0, 2])],
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let spec = ModelSpec::Mf(MfConfig {
            dim: 8,
            epochs: 5,
            ..MfConfig::default()
        });
        let a = train(&toy(), &spec, 42).unwrap();
        let b = train(&toy(), &spec, 42).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = train(&toy(), &spec, 43).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn separates_block_structure() {
        // Two blocks of three items; every user holds two items of their
        // block and is tested on the third. Items of a block co-occur and
        // never appear with the other block, so the BPR optimum puts each
        // held-out item above all out-of-block items.
        let blocks = [[0u32, 1, 2], [3, 4, 5]];
        let mut users = Vec::new();
        let mut held = Vec::new();
        for (b, items) in blocks.iter().enumerate() {
            for skip in 0..3 {
                let kept: Vec<u32> = (0..3).filter(|&k| k != skip).map(|k| items[k]).collect();
                users.push(user(&kept));
                held.push((items[skip], blocks[1 - b]));
            }
        }
        let data = DisclosedDataset {
            n_items: 6,
            n_features: 0,
            users,
        };
        let spec = ModelSpec::Mf(MfConfig {
            dim: 4,
            epochs: 200,
            negatives: 2,
            l2: 0.001,
            early_stopping: false,
            ..MfConfig::default()
        });
        let m = train(&data, &spec, 9).unwrap();
        for (u, (target, other)) in held.iter().enumerate() {
            let ranked = m.rank(u, &data.users[u], &[*target, other[0], other[1], other[2]]);
            assert_eq!(ranked[0], *target, "user {u}: {ranked:?}");
        }
    }

    #[test]
    fn cold_users_fall_back_to_popularity() {
        let spec = ModelSpec::Mf(MfConfig {
            dim: 4,
            epochs: 3,
            ..MfConfig::default()
        });
        let mut data = toy();
        data.users.push(user(&[]));
        let m = train(&data, &spec, 1).unwrap();
        let Model::Mf(_) = &m else { panic!() };
        // Counts: item 2 three times; 0, 1, 3, 4 twice; 5 once.
        assert_eq!(m.rank(5, &user(&[]), &[0, 1, 2, 3, 4, 5]), vec![2, 0, 1, 3, 4, 5]);
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let spec = MfConfig {
            dim: 4,
            epochs: 40,
            patience: 2,
            ..MfConfig::default()
        };
        let m = MfModel::fit(&toy(), &spec, 5).unwrap();
        assert!(m.epochs_run() >= 1 && m.epochs_run() <= 40);
    }

    #[test]
    fn invalid_config_rejected() {
        let spec = ModelSpec::Mf(MfConfig {
            dim: 0,
            ..MfConfig::default()
        });
        assert!(train(&toy(), &spec, 0).is_err());
    }
}
