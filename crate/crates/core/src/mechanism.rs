//! Platform disclosure mechanisms: a split rule turning a user's data into
//! disclosure units, and the choice space of 0/1 vectors over those units.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::dataset::ItemIdx;
use crate::error::{Error, Result};
use crate::ratio::Ratio;

/// Largest segment count accepted for the `separate` strategy (2^m vectors).
pub const MAX_SEPARATE_SEGMENTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Any subset of segments.
    Separate,
    /// Prefix runs starting from the oldest segment.
    OldestContinuous,
    /// Suffix runs ending at the newest segment.
    LatestContinuous,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::LatestContinuous, Strategy::OldestContinuous, Strategy::Separate];
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "separate" => Ok(Strategy::Separate),
            "oldest" | "oldest_continuous" => Ok(Strategy::OldestContinuous),
            "latest" | "latest_continuous" => Ok(Strategy::LatestContinuous),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (expected separate, oldest_continuous or latest_continuous)"
            ))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Separate => "separate",
            Strategy::OldestContinuous => "oldest_continuous",
            Strategy::LatestContinuous => "latest_continuous",
        })
    }
}

/// How profile attributes become disclosure units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrMode {
    /// Attributes are never offered.
    None,
    /// All attributes form one unit.
    #[default]
    Block,
    /// One unit per attribute.
    PerAttribute,
}

impl FromStr for AttrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "none" => Ok(AttrMode::None),
            "block" => Ok(AttrMode::Block),
            "per_attribute" => Ok(AttrMode::PerAttribute),
            other => Err(Error::Config(format!(
                "unknown attr_mode `{other}` (expected none, block or per_attribute)"
            ))),
        }
    }
}

/// Split granularity `p`, restricted so that `1/p` is a whole segment count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Granularity(Ratio);

impl Granularity {
    pub fn from_ratio(p: Ratio) -> Result<Self> {
        if p.numer() == 0 || p.numer() > p.denom() {
            return Err(Error::Config(format!("granularity p = {p} is outside (0, 1]")));
        }
        if p.numer() != 1 {
            return Err(Error::Config(format!("granularity p = {p} does not divide into whole segments")));
        }
        Ok(Granularity(p))
    }

    /// `p = 1/m`.
    pub fn segments_of(m: usize) -> Result<Self> {
        Granularity::from_ratio(Ratio::new(1, m as u64)?)
    }

    pub fn segments(&self) -> usize {
        self.0.denom() as usize
    }

    pub fn ratio(&self) -> Ratio {
        self.0
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Granularity::from_ratio(s.parse()?)
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl Serialize for Granularity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Granularity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = Ratio::deserialize(d)?;
        Granularity::from_ratio(r).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub strategy: Strategy,
    pub p: Granularity,
    #[serde(default)]
    pub attr_mode: AttrMode,
}

impl MechanismSpec {
    pub fn attr_units(&self, n_attributes: usize) -> usize {
        match self.attr_mode {
            AttrMode::None => 0,
            AttrMode::Block if n_attributes > 0 => 1,
            AttrMode::Block => 0,
            AttrMode::PerAttribute => n_attributes,
        }
    }

    pub fn choice_space(&self, n_attributes: usize) -> Result<ChoiceSpace> {
        build_choice_space(self.strategy, self.attr_units(n_attributes), self.p.segments())
    }
}

/// One user's data cut into disclosure units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitData {
    /// Attribute positions grouped per unit.
    pub attribute_units: Vec<Vec<usize>>,
    /// Contiguous, disjoint, oldest-first ranges over the train pool.
    pub behavior_segments: Vec<Range<usize>>,
}

impl SplitData {
    pub fn unit_count(&self) -> usize {
        self.attribute_units.len() + self.behavior_segments.len()
    }

    pub fn pool_len(&self) -> usize {
        self.behavior_segments.last().map_or(0, |r| r.end)
    }

    pub fn has_empty_segment(&self) -> bool {
        self.behavior_segments.iter().any(|r| r.is_empty())
    }
}

/// Cuts `len` behaviors into `1/p` segments, segment `j` (1-based) covering
/// positions `floor(p*len*(j-1)) + 1 ..= floor(p*len*j)`. When `len < 1/p`
/// some segments come out empty; they stay in place so every user sees the
/// same choice space.
pub fn percentage_split(len: usize, p: Granularity) -> Result<Vec<Range<usize>>> {
    if len == 0 {
        return Err(Error::Mechanism("cannot split an empty behavior sequence".into()));
    }
    let m = p.segments();
    let bound = |j: usize| (len * j) / m;
    Ok((1..=m).map(|j| bound(j - 1)..bound(j)).collect())
}

/// Groups `n_attributes` attribute positions into disclosure units.
pub fn split_attributes(n_attributes: usize, mode: AttrMode) -> Vec<Vec<usize>> {
    match mode {
        AttrMode::None => Vec::new(),
        AttrMode::Block if n_attributes == 0 => Vec::new(),
        AttrMode::Block => vec![(0..n_attributes).collect()],
        AttrMode::PerAttribute => (0..n_attributes).map(|a| vec![a]).collect(),
    }
}

pub fn split_user(pool_len: usize, n_attributes: usize, spec: &MechanismSpec) -> Result<SplitData> {
    Ok(SplitData {
        attribute_units: split_attributes(n_attributes, spec.attr_mode),
        behavior_segments: percentage_split(pool_len, spec.p)?,
    })
}

/// A 0/1 disclosure vector: attribute-unit bits first, then behavior
/// segment bits oldest to newest.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(from = "Vec<u8>")]
pub struct ChoiceVector(Vec<bool>);

impl From<Vec<u8>> for ChoiceVector {
    fn from(bits: Vec<u8>) -> Self {
        ChoiceVector(bits.into_iter().map(|b| b != 0).collect())
    }
}

impl From<Vec<bool>> for ChoiceVector {
    fn from(bits: Vec<bool>) -> Self {
        ChoiceVector(bits)
    }
}

impl Serialize for ChoiceVector {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.0.iter().map(|&b| b as u8))
    }
}

impl ChoiceVector {
    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| !b)
    }

    pub fn ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Bitwise `self >= other`.
    pub fn dominates(&self, other: &ChoiceVector) -> bool {
        self.len() == other.len() && self.0.iter().zip(&other.0).all(|(&a, &b)| a || !b)
    }
}

impl fmt::Display for ChoiceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, &b) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(if b { "1" } else { "0" })?;
        }
        f.write_str("]")
    }
}

/// The legal disclosure vectors. Index 0 is always the all-zero vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceSpace {
    pub strategy: Strategy,
    pub attr_units: usize,
    pub segments: usize,
    pub vectors: Vec<ChoiceVector>,
}

impl ChoiceSpace {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&ChoiceVector> {
        self.vectors.get(index)
    }

    /// Index of the all-ones vector.
    pub fn full_disclosure(&self) -> usize {
        self.vectors.len() - 1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn behavior_vectors(strategy: Strategy, m: usize) -> Vec<Vec<bool>> {
    match strategy {
        Strategy::Separate => (0u64..1 << m)
            .map(|mask| (0..m).map(|j| mask >> j & 1 == 1).collect())
            .collect(),
        Strategy::OldestContinuous => (0..=m).map(|k| (0..m).map(|j| j < k).collect()).collect(),
        Strategy::LatestContinuous => (0..=m).map(|k| (0..m).map(|j| j >= m - k).collect()).collect(),
    }
}

/// Enumerates the choice space: behavior sub-vectors per strategy, crossed
/// with every subset of the attribute units. Ordering is attribute
/// combination (as a bitmask) outer, behavior vector inner, so both the
/// empty and the full vector sit at the ends.
pub fn build_choice_space(strategy: Strategy, attr_units: usize, m: usize) -> Result<ChoiceSpace> {
    if m == 0 {
        return Err(Error::Mechanism("choice space needs at least one behavior segment".into()));
    }
    if strategy == Strategy::Separate && m > MAX_SEPARATE_SEGMENTS {
        return Err(Error::Mechanism(format!(
            "separate strategy with {m} segments would enumerate 2^{m} choices (limit 2^{MAX_SEPARATE_SEGMENTS})"
        )));
    }
    if attr_units > 16 {
        return Err(Error::Mechanism(format!("{attr_units} attribute units is too many to enumerate")));
    }
    let behaviors = behavior_vectors(strategy, m);
    let mut vectors = Vec::with_capacity(behaviors.len() << attr_units);
    for attr_mask in 0u64..1 << attr_units {
        for b in &behaviors {
            let mut bits: Vec<bool> = (0..attr_units).map(|a| attr_mask >> a & 1 == 1).collect();
            bits.extend_from_slice(b);
            vectors.push(ChoiceVector(bits));
        }
    }
    Ok(ChoiceSpace {
        strategy,
        attr_units,
        segments: m,
        vectors,
    })
}

/// The data a user hands over for one epoch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisclosedData {
    /// Disclosed attribute feature ids.
    pub attributes: Vec<u32>,
    /// Disclosed behaviors in original chronological order.
    pub behaviors: Vec<ItemIdx>,
    pub source_choice: Option<usize>,
}

impl DisclosedData {
    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty() && self.behaviors.is_empty()
    }

    /// Everything in the pool, used for calibration.
    pub fn full(pool: &[ItemIdx], attributes: &[u32]) -> Self {
        DisclosedData {
            attributes: attributes.to_vec(),
            behaviors: pool.to_vec(),
            source_choice: None,
        }
    }
}

/// Materializes `choice` against a user's split: the union of the selected
/// units, behaviors kept in chronological order.
///
/// `attributes` holds the user's attribute feature ids, positionally
/// matching the indices in `split.attribute_units`.
pub fn apply_choice(
    choice: &ChoiceVector,
    split: &SplitData,
    pool: &[ItemIdx],
    attributes: &[u32],
) -> Result<DisclosedData> {
    if choice.len() != split.unit_count() {
        return Err(Error::Mechanism(format!(
            "choice vector has {} bits but the split has {} units",
            choice.len(),
            split.unit_count()
        )));
    }
    if split.pool_len() != pool.len() {
        return Err(Error::Mechanism(format!(
            "split covers {} behaviors but the pool has {}",
            split.pool_len(),
            pool.len()
        )));
    }
    let (attr_bits, behavior_bits) = choice.bits().split_at(split.attribute_units.len());
    let mut disclosed = DisclosedData::default();
    for (unit, _) in split.attribute_units.iter().zip(attr_bits).filter(|(_, &on)| on) {
        for &a in unit {
            let id = attributes.get(a).ok_or_else(|| {
                Error::Mechanism(format!("attribute unit references position {a} past the user's attributes"))
            })?;
            disclosed.attributes.push(*id);
        }
    }
    for (range, _) in split.behavior_segments.iter().zip(behavior_bits).filter(|(_, &on)| on) {
        disclosed.behaviors.extend_from_slice(&pool[range.clone()]);
    }
    Ok(disclosed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecs(space: &ChoiceSpace) -> Vec<Vec<u8>> {
        space.vectors.iter().map(|v| v.bits().iter().map(|&b| b as u8).collect()).collect()
    }

    #[test]
    fn split_two_halves() {
        let p = Granularity::segments_of(2).unwrap();
        assert_eq!(percentage_split(4, p).unwrap(), vec![0..2, 2..4]);
    }

    #[test]
    fn split_tenths_of_ten_are_singletons() {
        let p: Granularity = "1/10".parse().unwrap();
        let segs = percentage_split(10, p).unwrap();
        assert_eq!(segs.len(), 10);
        assert!(segs.iter().enumerate().all(|(j, r)| *r == (j..j + 1)));
    }

    #[test]
    fn split_floor_boundaries() {
        // floor(1.75 j) for j = 1..4 is 1, 3, 5, 7.
        let p: Granularity = "1/4".parse().unwrap();
        let sizes: Vec<usize> = percentage_split(7, p).unwrap().iter().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![1, 2, 2, 2]);
    }

    #[test]
    fn short_sequences_get_empty_segments() {
        let p: Granularity = "1/4".parse().unwrap();
        let segs = percentage_split(2, p).unwrap();
        assert_eq!(segs, vec![0..0, 0..1, 1..1, 1..2]);
        assert!(percentage_split(0, p).is_err());
    }

    #[test]
    fn granularity_validation() {
        assert_eq!("1/3".parse::<Granularity>().unwrap().segments(), 3);
        assert_eq!("1".parse::<Granularity>().unwrap().segments(), 1);
        assert!("0.3".parse::<Granularity>().is_err());
        assert!("2/3".parse::<Granularity>().is_err());
        assert!("0/3".parse::<Granularity>().is_err());
        assert!("3/2".parse::<Granularity>().is_err());
    }

    #[test]
    fn oldest_continuous_three_segments() {
        let s = build_choice_space(Strategy::OldestContinuous, 0, 3).unwrap();
        assert_eq!(vecs(&s), vec![vec![0, 0, 0], vec![1, 0, 0], vec![1, 1, 0], vec![1, 1, 1]]);
    }

    #[test]
    fn separate_three_segments_is_every_mask() {
        let s = build_choice_space(Strategy::Separate, 0, 3).unwrap();
        assert_eq!(s.len(), 8);
        let mut sorted = vecs(&s);
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 8);
    }

    #[test]
    fn latest_continuous_with_attribute_block() {
        let s = build_choice_space(Strategy::LatestContinuous, 1, 2).unwrap();
        assert_eq!(
            vecs(&s),
            vec![
                vec![0, 0, 0],
                vec![0, 0, 1],
                vec![0, 1, 1],
                vec![1, 0, 0],
                vec![1, 0, 1],
                vec![1, 1, 1],
            ]
        );
    }

    #[test]
    fn zero_segments_rejected() {
        assert!(build_choice_space(Strategy::Separate, 0, 0).is_err());
        assert!(build_choice_space(Strategy::Separate, 0, 21).is_err());
    }

    #[test]
    fn apply_choice_three_attributes_two_halves() {
        // Three per-attribute units and two behavior halves; disclosing the
        // first half only.
        let split = SplitData {
            attribute_units: split_attributes(3, AttrMode::PerAttribute),
            behavior_segments: percentage_split(4, "1/2".parse().unwrap()).unwrap(),
        };
        let pool = [10, 11, 12, 13];
        let attrs = [100, 101, 102];
        let choice: ChoiceVector = vec![0u8, 0, 0, 1, 0].into();
        let d = apply_choice(&choice, &split, &pool, &attrs).unwrap();
        assert_eq!(d.behaviors, vec![10, 11]);
        assert!(d.attributes.is_empty());

        let none = apply_choice(&vec![0u8; 5].into(), &split, &pool, &attrs).unwrap();
        assert!(none.is_empty());

        let all = apply_choice(&vec![1u8; 5].into(), &split, &pool, &attrs).unwrap();
        assert_eq!(all.behaviors, pool.to_vec());
        assert_eq!(all.attributes, attrs.to_vec());

        let err = apply_choice(&vec![1u8; 4].into(), &split, &pool, &attrs).unwrap_err();
        assert!(err.to_string().contains("4 bits"));
    }

    #[test]
    fn binary_mechanism_at_p_one() {
        for strategy in Strategy::ALL {
            let s = build_choice_space(strategy, 0, 1).unwrap();
            assert_eq!(vecs(&s), vec![vec![0], vec![1]]);
        }
    }

    #[test]
    fn choice_space_json_uses_bits() {
        let s = build_choice_space(Strategy::OldestContinuous, 0, 2).unwrap();
        let json = s.to_json().unwrap();
        let back: ChoiceSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(json.contains("\"oldest_continuous\""));
    }
}
