//! Weighted five-axis similarity and exact top-K retrieval.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::csd::{Axis, Csd};
use crate::embedding::{cosine, fingerprint};
use crate::error::{Error, Result};
use crate::memory_bank::{MemoryBank, MemoryEntry};

pub const DEFAULT_K: usize = 8;

pub type AxisScores = BTreeMap<Axis, f64>;

/// Non-negative per-axis weights, normalised to sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Axis, f64>", into = "BTreeMap<Axis, f64>")]
pub struct AxisWeights([f64; 5]);

impl AxisWeights {
    pub fn new(raw: [f64; 5]) -> Result<Self> {
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(format!("axis weights must be finite and non-negative: {raw:?}")));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidInput("at least one axis weight must be positive".into()));
        }
        Ok(Self(raw.map(|w| w / sum)))
    }

    pub fn uniform() -> Self {
        Self([0.2; 5])
    }

    pub fn keep_only(axis: Axis) -> Self {
        Self::new(keep_only_mask(axis)).expect("indicator is valid")
    }

    pub fn remove(axis: Axis) -> Self {
        Self::new(remove_mask(axis)).expect("four positive weights")
    }

    pub fn get(&self, axis: Axis) -> f64 {
        self.0[axis.index()]
    }

    pub fn as_array(&self) -> [f64; 5] {
        self.0
    }

    /// Axes with non-zero weight.
    pub fn active(&self) -> impl Iterator<Item = Axis> + '_ {
        Axis::ALL.into_iter().filter(|a| self.get(*a) > 0.0)
    }
}

impl Default for AxisWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

/// Unnormalised indicator of one axis.
pub fn keep_only_mask(axis: Axis) -> [f64; 5] {
    let mut m = [0.0; 5];
    m[axis.index()] = 1.0;
    m
}

/// Unnormalised ones on every other axis.
pub fn remove_mask(axis: Axis) -> [f64; 5] {
    let mut m = [1.0; 5];
    m[axis.index()] = 0.0;
    m
}

impl TryFrom<BTreeMap<Axis, f64>> for AxisWeights {
    type Error = Error;

    fn try_from(m: BTreeMap<Axis, f64>) -> Result<Self> {
        Self::new(Axis::ALL.map(|a| m.get(&a).copied().unwrap_or(0.0)))
    }
}

impl From<AxisWeights> for BTreeMap<Axis, f64> {
    fn from(w: AxisWeights) -> Self {
        Axis::ALL.into_iter().map(|a| (a, w.get(a))).collect()
    }
}

/// `s,a,p,f,i` in axis order.
impl FromStr for AxisWeights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("weights `{s}`: {e}")))?;
        let raw: [f64; 5] = parts
            .try_into()
            .map_err(|_| Error::InvalidInput(format!("weights `{s}`: expected five values")))?;
        Self::new(raw)
    }
}

impl fmt::Display for AxisWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Clamped cosine of one axis; 0 when either side is empty.
pub fn axis_similarity(query: &Csd, candidate: &Csd, axis: Axis) -> f64 {
    let a = query.axis(axis).embedding();
    let b = candidate.axis(axis).embedding();
    cosine(a, b).map(|c| c.max(0.0)).unwrap_or(0.0)
}

pub fn axis_scores(query: &Csd, candidate: &Csd) -> AxisScores {
    Axis::ALL
        .into_iter()
        .map(|a| (a, axis_similarity(query, candidate, a)))
        .collect()
}

/// Weighted sum in axis order.
pub fn aggregate(scores: &AxisScores, w: &AxisWeights) -> f64 {
    Axis::ALL
        .into_iter()
        .map(|a| w.get(a) * scores.get(&a).copied().unwrap_or(0.0))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedEntry {
    pub entry_id: u64,
    pub score: f64,
    pub per_axis: AxisScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<RetrievedEntry>,
    pub query_fingerprint: u64,
}

impl RetrievalResult {
    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.entry_id).collect()
    }
}

/// Score descending, then later success first, then lower id.
pub fn rank_order(a: (&MemoryEntry, f64), b: (&MemoryEntry, f64)) -> Ordering {
    b.1.total_cmp(&a.1)
        .then_with(|| b.0.last_success_at.cmp(&a.0.last_success_at))
        .then_with(|| a.0.entry_id.cmp(&b.0.entry_id))
}

/// Exact linear scan. `exclude_task` drops entries with that task name.
pub fn retrieve_top_k(
    query: &Csd,
    bank: &MemoryBank,
    w: &AxisWeights,
    k: usize,
    exclude_task: Option<&str>,
) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut scored: Vec<(&MemoryEntry, f64, AxisScores)> = bank
        .entries()
        .filter(|e| exclude_task != Some(e.task_name.as_str()))
        .map(|e| {
            let per_axis = axis_scores(query, &e.csd);
            let score = aggregate(&per_axis, w);
            (e, score, per_axis)
        })
        .collect();
    scored.sort_by(|a, b| rank_order((a.0, a.1), (b.0, b.1)));
    scored.truncate(k);
    Ok(RetrievalResult {
        hits: scored
            .into_iter()
            .map(|(e, score, per_axis)| RetrievedEntry {
                entry_id: e.entry_id,
                score,
                per_axis,
            })
            .collect(),
        query_fingerprint: query_fingerprint(query),
    })
}

/// Hash of the query's axis contents.
pub fn query_fingerprint(query: &Csd) -> u64 {
    let mut bytes = Vec::new();
    for (axis, p) in query.axes() {
        bytes.extend_from_slice(axis.key().as_bytes());
        for s in p.content() {
            bytes.push(0x1f);
            bytes.extend_from_slice(s.as_bytes());
        }
        bytes.push(0x1e);
    }
    fingerprint(&bytes)
}
