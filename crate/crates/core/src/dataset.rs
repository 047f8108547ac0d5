//! Interaction-log ingestion: parse raw logs, filter users and items to a
//! fixpoint, build time-ordered behavior sequences and the leave-one-out
//! evaluation split.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

/// Dense item index into [`Histories::items`].
pub type ItemIdx = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

/// Line formats accepted by [`parse_interactions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LogFormat {
    /// MovieLens-100k `u.data`: `user \t item \t rating \t ts`.
    Tab,
    /// MovieLens-1M style `user::item::rating::ts`.
    DoubleColon,
    /// Comma separated `user,item,ts`, optional header.
    Csv,
}

impl FromStr for LogFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tab" | "tsv" => Ok(LogFormat::Tab),
            "double-colon" | "double_colon" | "dat" => Ok(LogFormat::DoubleColon),
            "csv" => Ok(LogFormat::Csv),
            other => Err(Error::Config(format!(
                "unknown log format `{other}` (expected tab, double-colon or csv)"
            ))),
        }
    }
}

impl fmt::Display for LogFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogFormat::Tab => "tab",
            LogFormat::DoubleColon => "double-colon",
            LogFormat::Csv => "csv",
        })
    }
}

fn parse_timestamp(raw: &str, line: usize) -> Result<i64> {
    let ts = match raw.parse::<i64>() {
        Ok(v) => v,
        Err(_) => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() && v.fract() == 0.0 => v as i64,
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("timestamp `{raw}` is not an integer"),
                })
            }
        },
    };
    if ts < 0 {
        return Err(Error::Parse {
            line,
            message: format!("negative timestamp {ts}"),
        });
    }
    Ok(ts)
}

/// Parses an interaction log. Ratings and review payloads are dropped: every
/// row becomes an implicit-feedback event. Blank lines are skipped and a
/// leading `user,...` header is allowed for CSV.
pub fn parse_interactions<R: BufRead>(reader: R, format: LogFormat) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    let mut seen_content = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: format!("unreadable line: {e}"),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            LogFormat::Tab => line.split('\t').map(str::trim).collect(),
            LogFormat::DoubleColon => line.split("::").map(str::trim).collect(),
            LogFormat::Csv => line.split(',').map(str::trim).collect(),
        };
        let first_content = !seen_content;
        seen_content = true;
        if format == LogFormat::Csv && first_content && fields[0].eq_ignore_ascii_case("user") {
            continue;
        }
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected at least 3 {format} fields, found {}", fields.len()),
            });
        }
        let ts_field = match format {
            LogFormat::Csv => fields[2],
            _ if fields.len() >= 4 => fields[3],
            _ => fields[2],
        };
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: lineno,
                message: "empty user or item identifier".into(),
            });
        }
        out.push(Interaction {
            user_id: fields[0].to_string(),
            item_id: fields[1].to_string(),
            timestamp: parse_timestamp(ts_field, lineno)?,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

/// Orders identifiers numerically when both parse as integers, otherwise
/// lexically; numeric identifiers sort first.
pub fn natural_id_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// How an interaction-count threshold is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cutoff {
    /// Keep entities with at least `min` interactions.
    Inclusive,
    /// Keep entities with strictly more than `min` interactions.
    #[default]
    Exclusive,
}

impl FromStr for Cutoff {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inclusive" => Ok(Cutoff::Inclusive),
            "exclusive" => Ok(Cutoff::Exclusive),
            other => Err(Error::Config(format!(
                "unknown cutoff `{other}` (expected inclusive or exclusive)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub min_user_interactions: usize,
    pub min_item_interactions: usize,
    #[serde(default)]
    pub cutoff: Cutoff,
}

impl FilterThresholds {
    pub fn new(min_user: usize, min_item: usize, cutoff: Cutoff) -> Self {
        FilterThresholds {
            min_user_interactions: min_user,
            min_item_interactions: min_item,
            cutoff,
        }
    }

    fn keeps(&self, count: usize, min: usize) -> bool {
        match self.cutoff {
            Cutoff::Inclusive => count >= min,
            Cutoff::Exclusive => count > min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub value: String,
}

impl Attribute {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        Attribute {
            name: name.into(),
            value: value.into(),
        }
    }

    pub fn key(&self) -> String {
        format!("{}={}", self.name, self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Behavior {
    pub item: ItemIdx,
    pub timestamp: i64,
}

/// One user's profile attributes and chronologically ordered behaviors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserData {
    pub user_id: String,
    pub attributes: Vec<Attribute>,
    pub behaviors: Vec<Behavior>,
}

/// Filtered per-user histories over a fixed item vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histories {
    pub items: Vec<String>,
    pub users: Vec<UserData>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
}

/// Deduplicates, filters to a fixpoint and orders each user's behaviors by
/// `(timestamp, item id)`.
///
/// Filtering alternates an item pass and a user pass until neither removes
/// anything, so the result does not depend on pass order and running it
/// again on its own output is a no-op.
pub fn build_user_histories(
    interactions: &[Interaction],
    thresholds: FilterThresholds,
) -> Result<Histories> {
    if thresholds.min_user_interactions == 0 || thresholds.min_item_interactions == 0 {
        return Err(Error::Config("filter thresholds must be at least 1".into()));
    }

    let mut user_ids: Vec<&str> = Vec::new();
    let mut item_ids: Vec<&str> = Vec::new();
    let mut user_lookup: HashMap<&str, u32> = HashMap::new();
    let mut item_lookup: HashMap<&str, u32> = HashMap::new();
    let mut seen: HashSet<(u32, u32, i64)> = HashSet::with_capacity(interactions.len());
    let mut rows: Vec<(u32, u32, i64)> = Vec::with_capacity(interactions.len());

    for it in interactions {
        let u = *user_lookup.entry(&it.user_id).or_insert_with(|| {
            user_ids.push(&it.user_id);
            (user_ids.len() - 1) as u32
        });
        let i = *item_lookup.entry(&it.item_id).or_insert_with(|| {
            item_ids.push(&it.item_id);
            (item_ids.len() - 1) as u32
        });
        if seen.insert((u, i, it.timestamp)) {
            rows.push((u, i, it.timestamp));
        }
    }

    loop {
        let before = rows.len();
        let mut item_counts = vec![0usize; item_ids.len()];
        for &(_, i, _) in &rows {
            item_counts[i as usize] += 1;
        }
        rows.retain(|&(_, i, _)| thresholds.keeps(item_counts[i as usize], thresholds.min_item_interactions));

        let mut user_counts = vec![0usize; user_ids.len()];
        for &(u, _, _) in &rows {
            user_counts[u as usize] += 1;
        }
        rows.retain(|&(u, _, _)| thresholds.keeps(user_counts[u as usize], thresholds.min_user_interactions));

        if rows.len() == before {
            break;
        }
    }

    if rows.is_empty() {
        return Err(Error::Data("filters eliminated all users".into()));
    }

    let mut kept_items: Vec<u32> = rows.iter().map(|r| r.1).collect::<HashSet<_>>().into_iter().collect();
    kept_items.sort_by(|&a, &b| natural_id_cmp(item_ids[a as usize], item_ids[b as usize]));
    let mut item_remap = vec![u32::MAX; item_ids.len()];
    for (dense, &raw) in kept_items.iter().enumerate() {
        item_remap[raw as usize] = dense as u32;
    }

    let mut per_user: HashMap<u32, Vec<Behavior>> = HashMap::new();
    for &(u, i, ts) in &rows {
        per_user.entry(u).or_default().push(Behavior {
            item: item_remap[i as usize],
            timestamp: ts,
        });
    }
    let mut users: Vec<UserData> = per_user
        .into_iter()
        .map(|(u, mut behaviors)| {
            behaviors.sort_by_key(|b| (b.timestamp, b.item));
            UserData {
                user_id: user_ids[u as usize].to_string(),
                attributes: Vec::new(),
                behaviors,
            }
        })
        .collect();
    users.sort_by(|a, b| natural_id_cmp(&a.user_id, &b.user_id));

    Ok(Histories {
        items: kept_items.iter().map(|&i| item_ids[i as usize].to_string()).collect(),
        users,
    })
}

fn age_bucket(age: u32) -> &'static str {
    match age {
        0..=17 => "under_18",
        18..=24 => "18-24",
        25..=34 => "25-34",
        35..=44 => "35-44",
        45..=49 => "45-49",
        50..=55 => "50-55",
        _ => "56+",
    }
}

/// Parses a MovieLens `u.user` profile file (`id|age|sex|occupation|zip`)
/// into four categorical attributes per user.
pub fn parse_profiles<R: BufRead>(reader: R) -> Result<HashMap<String, Vec<Attribute>>> {
    let mut out = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: format!("unreadable line: {e}"),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('|').map(str::trim).collect();
        if f.len() < 5 {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected 5 `|`-separated profile fields, found {}", f.len()),
            });
        }
        let age: u32 = f[1].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("age `{}` is not an integer", f[1]),
        })?;
        let zip_prefix: String = f[4].chars().take(2).collect();
        out.insert(
            f[0].to_string(),
            vec![
                Attribute::new("sex", f[2]),
                Attribute::new("age", age_bucket(age)),
                Attribute::new("occupation", f[3]),
                Attribute::new("zip", zip_prefix),
            ],
        );
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

impl Histories {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.users.iter().map(|u| u.behaviors.len()).sum()
    }

    pub fn stats(&self) -> DatasetStats {
        let (users, items, interactions) = (self.n_users(), self.n_items(), self.n_interactions());
        DatasetStats {
            users,
            items,
            interactions,
            density: interactions as f64 / (users as f64 * items as f64),
        }
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.users
            .binary_search_by(|u| natural_id_cmp(&u.user_id, user_id))
            .ok()
    }

    /// Attaches profile attributes; users absent from `profiles` keep none.
    pub fn attach_profiles(&mut self, profiles: &HashMap<String, Vec<Attribute>>) {
        for user in &mut self.users {
            if let Some(attrs) = profiles.get(&user.user_id) {
                user.attributes = attrs.clone();
            }
        }
    }

    /// Sorted `name=value` keys over every user's attributes.
    pub fn attribute_vocabulary(&self) -> Vec<String> {
        let mut keys: Vec<String> = self
            .users
            .iter()
            .flat_map(|u| u.attributes.iter().map(Attribute::key))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        keys.sort();
        keys
    }

    /// Per-user attribute feature ids against [`Self::attribute_vocabulary`],
    /// in the user's attribute order.
    pub fn attribute_features(&self) -> (usize, Vec<Vec<u32>>) {
        let vocab = self.attribute_vocabulary();
        let lookup: HashMap<&str, u32> = vocab.iter().enumerate().map(|(i, k)| (k.as_str(), i as u32)).collect();
        let features = self
            .users
            .iter()
            .map(|u| u.attributes.iter().map(|a| lookup[a.key().as_str()]).collect())
            .collect();
        (vocab.len(), features)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let h: Histories = serde_json::from_slice(bytes)?;
        h.validate()?;
        Ok(h)
    }

    /// SHA-256 of the canonical JSON snapshot, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?)))
    }

    fn validate(&self) -> Result<()> {
        let n = self.items.len() as u32;
        for u in &self.users {
            if u.behaviors.iter().any(|b| b.item >= n) {
                return Err(Error::Data(format!("user {} references an unknown item", u.user_id)));
            }
            if u.behaviors.windows(2).any(|w| (w[0].timestamp, w[0].item) > (w[1].timestamp, w[1].item)) {
                return Err(Error::Data(format!("user {} behaviors are not time ordered", u.user_id)));
            }
        }
        Ok(())
    }
}

/// Leave-one-out split for one user: the final behavior is held out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub test_item: ItemIdx,
    pub train_pool: Vec<ItemIdx>,
}

/// Holds out each user's last behavior; everything earlier forms the pool
/// the disclosure mechanism operates on. Indexed like `histories.users`.
pub fn leave_one_out(histories: &Histories) -> Result<Vec<EvalSplit>> {
    histories
        .users
        .iter()
        .map(|u| {
            let (last, rest) = u.behaviors.split_last().filter(|(_, r)| !r.is_empty()).ok_or_else(|| {
                Error::Data(format!(
                    "user {} has {} behaviors; leave-one-out needs at least 2",
                    u.user_id,
                    u.behaviors.len()
                ))
            })?;
            Ok(EvalSplit {
                test_item: last.item,
                train_pool: rest.iter().map(|b| b.item).collect(),
            })
        })
        .collect()
}

/// Parameters for [`synthetic`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability a behavior stays inside the user's taste cluster.
    pub affinity: f64,
    /// Probability a behavior follows its predecessor's item chain.
    pub sequential: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            users: 60,
            items: 120,
            clusters: 4,
            min_len: 20,
            max_len: 40,
            affinity: 0.8,
            sequential: 0.5,
            seed: 1,
        }
    }
}

/// Clustered synthetic histories with popularity skew and a sequential
/// successor signal, used by tests and the browser demo.
pub fn synthetic(spec: &SyntheticSpec) -> Histories {
    assert!(spec.clusters >= 1 && spec.items >= spec.clusters * 2);
    assert!(spec.min_len >= 2 && spec.max_len >= spec.min_len);
    let mut rng = seed::rng(spec.seed, Stream::Synthetic, 0, 0);
    let per_cluster = spec.items / spec.clusters;
    let cluster_of = |item: usize| (item / per_cluster).min(spec.clusters - 1);
    let zipf = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> usize {
        // Inverse-CDF draw with weight 1/(rank+1).
        let total: f64 = (1..=n).map(|r| 1.0 / r as f64).sum();
        let mut x = rng.random::<f64>() * total;
        for r in 0..n {
            x -= 1.0 / (r + 1) as f64;
            if x <= 0.0 {
                return r;
            }
        }
        n - 1
    };

    let users = (0..spec.users)
        .map(|u| {
            let cluster = u % spec.clusters;
            let len = rng.random_range(spec.min_len..=spec.max_len).min(spec.items);
            let mut seen = HashSet::new();
            let mut seq: Vec<usize> = Vec::with_capacity(len);
            while seq.len() < len {
                let candidate = match seq.last() {
                    Some(&prev) if rng.random::<f64>() < spec.sequential => {
                        let c = cluster_of(prev);
                        let start = c * per_cluster;
                        start + (prev - start + 1) % per_cluster
                    }
                    _ if rng.random::<f64>() < spec.affinity => cluster * per_cluster + zipf(&mut rng, per_cluster),
                    _ => zipf(&mut rng, spec.items),
                };
                let item = if seen.contains(&candidate) {
                    rng.random_range(0..spec.items)
                } else {
                    candidate
                };
                if seen.insert(item) {
                    seq.push(item);
                }
            }
            UserData {
                user_id: format!("u{u}"),
                attributes: vec![Attribute::new("segment", format!("c{cluster}"))],
                behaviors: seq
                    .into_iter()
                    .enumerate()
                    .map(|(k, item)| Behavior {
                        item: item as ItemIdx,
                        timestamp: 1_000 + k as i64 * 60,
                    })
                    .collect(),
            }
        })
        .collect();

    Histories {
        items: (0..spec.items).map(|i| format!("i{i:04}")).collect(),
        users,
    }
}
