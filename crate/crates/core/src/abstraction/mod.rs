//! Q-value bucket abstraction and episode feature encoding.
//!
//! Two concrete states are merged when, for every action, their Q-values fall
//! in the same width-`d` ceiling bucket. Abstract ids are dense and assigned
//! in first-discovery order over the training corpus.

mod select;

pub use select::{coarse_ladder, coarse_to_fine, select_level, LevelReport, SearchBounds, Selection, SelectionConfig};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Episode, EpisodeSet};
use crate::error::{Error, Result};
use crate::forest::FeatureMatrix;

/// Per-action bucket indices `ceil(q_a / d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BucketKey(pub Vec<i64>);

/// Relative distance to an integer under which a quotient is treated as
/// exactly that integer.
const SNAP_TOLERANCE: f64 = 1e-12;

fn snapped_ceil(ratio: f64) -> f64 {
    let nearest = ratio.round();
    if (ratio - nearest).abs() <= SNAP_TOLERANCE * ratio.abs().max(1.0) {
        nearest
    } else {
        ratio.ceil()
    }
}

pub fn bucketize(q: &[f64], d: f64) -> Result<BucketKey> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidConfig(format!("abstraction level {d} must be positive")));
    }
    q.iter()
        .map(|&v| {
            if !v.is_finite() {
                return Err(Error::NonFinite("Q-value"));
            }
            let b = snapped_ceil(v / d);
            if b.abs() >= i64::MAX as f64 {
                return Err(Error::NonFinite("bucket index"));
            }
            Ok(b as i64)
        })
        .collect::<Result<_>>()
        .map(BucketKey)
}

/// Result of looking a Q-vector up in a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AbstractState {
    Seen(usize),
    Unseen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbstractionTable {
    d: f64,
    keys: Vec<BucketKey>,
    index: HashMap<BucketKey, usize>,
}

#[derive(Serialize, Deserialize)]
struct TableDoc {
    d: f64,
    keys: Vec<Vec<i64>>,
    ids: Vec<usize>,
}

impl Serialize for AbstractionTable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TableDoc {
            d: self.d,
            keys: self.keys.iter().map(|k| k.0.clone()).collect(),
            ids: (0..self.keys.len()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for AbstractionTable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let doc = TableDoc::deserialize(d)?;
        if !(doc.d > 0.0 && doc.d.is_finite()) {
            return Err(D::Error::custom("abstraction level must be positive"));
        }
        if doc.ids.len() != doc.keys.len() || doc.ids.iter().enumerate().any(|(i, &id)| i != id) {
            return Err(D::Error::custom("ids must be 0..n listed in order"));
        }
        let mut table = AbstractionTable::empty(doc.d);
        for key in doc.keys {
            let id = table.keys.len();
            if table.index.insert(BucketKey(key.clone()), id).is_some() {
                return Err(D::Error::custom("duplicate bucket key"));
            }
            table.keys.push(BucketKey(key));
        }
        Ok(table)
    }
}

impl AbstractionTable {
    fn empty(d: f64) -> Self {
        AbstractionTable {
            d,
            keys: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Assign ids to every distinct bucket key in `q_vectors`, in order.
    pub fn from_q_vectors<'a>(q_vectors: impl IntoIterator<Item = &'a [f64]>, d: f64) -> Result<Self> {
        let mut table = AbstractionTable::empty(d);
        bucketize(&[], d)?;
        for q in q_vectors {
            let key = bucketize(q, d)?;
            if !table.index.contains_key(&key) {
                table.index.insert(key.clone(), table.keys.len());
                table.keys.push(key);
            }
        }
        Ok(table)
    }

    pub fn build(train: &EpisodeSet, d: f64) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyEpisodeSet);
        }
        Self::from_q_vectors(train.episodes.iter().flat_map(Episode::q_stream), d)
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    /// Number of abstract states.
    pub fn n(&self) -> usize {
        self.keys.len()
    }

    pub fn keys(&self) -> &[BucketKey] {
        &self.keys
    }

    pub fn lookup(&self, q: &[f64]) -> Result<AbstractState> {
        let key = bucketize(q, self.d)?;
        Ok(self.index.get(&key).map_or(AbstractState::Unseen, |&id| AbstractState::Seen(id)))
    }

    pub fn lookup_episode(&self, episode: &Episode) -> Result<Vec<AbstractState>> {
        episode.q_stream().map(|q| self.lookup(q)).collect()
    }
}

/// Number of distinct per-step Q-vectors, used as the concrete-state count.
pub fn concrete_state_count(set: &EpisodeSet) -> usize {
    let mut seen = std::collections::HashSet::new();
    for q in set.episodes.iter().flat_map(Episode::q_stream) {
        seen.insert(q.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    seen.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Binary,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnseenPolicy {
    /// Skip unseen abstract states and keep monitoring.
    Ignore,
    /// Raise an alert and freeze the monitor at the first unseen state.
    Stop,
}

/// Presence indicators or visit counts over abstract states.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    mode: FeatureMode,
    counts: Vec<f32>,
}

impl FeatureVector {
    pub fn new(mode: FeatureMode, n: usize) -> Self {
        FeatureVector {
            mode,
            counts: vec![0.0; n],
        }
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.counts
    }

    pub fn record(&mut self, id: usize) -> Result<()> {
        let n = self.counts.len();
        let slot = self.counts.get_mut(id).ok_or(Error::IdOutOfRange { id, n })?;
        *slot = match self.mode {
            FeatureMode::Binary => 1.0,
            FeatureMode::Frequency => *slot + 1.0,
        };
        Ok(())
    }
}

/// Encode an episode prefix. Under [`UnseenPolicy::Ignore`] unseen states are
/// dropped; under [`UnseenPolicy::Stop`] encoding ends at the first unseen state.
pub fn encode(ids: &[AbstractState], n: usize, mode: FeatureMode, policy: UnseenPolicy) -> Result<FeatureVector> {
    let mut v = FeatureVector::new(mode, n);
    for &id in ids {
        match (id, policy) {
            (AbstractState::Seen(id), _) => v.record(id)?,
            (AbstractState::Unseen, UnseenPolicy::Ignore) => {}
            (AbstractState::Unseen, UnseenPolicy::Stop) => break,
        }
    }
    Ok(v)
}

/// One whole-episode feature row per episode.
pub fn feature_matrix(table: &AbstractionTable, set: &EpisodeSet, mode: FeatureMode) -> Result<FeatureMatrix> {
    let mut m = FeatureMatrix::zeros(set.len(), table.n());
    for (row, ep) in set.episodes.iter().enumerate() {
        let ids = table.lookup_episode(ep)?;
        let v = encode(&ids, table.n(), mode, UnseenPolicy::Ignore)?;
        for (col, &x) in v.as_slice().iter().enumerate() {
            if x != 0.0 {
                m.set(row, col, x);
            }
        }
    }
    Ok(m)
}
