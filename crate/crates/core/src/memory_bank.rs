//! Long-term store of successful experiences plus a failure log.
//!
//! Entries are kept in ascending id order. Persistence is JSON Lines: a header
//! line followed by one entry per line; the failure log lives in its own file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::csd::{Axis, Csd, Timestamp};
use crate::embedding::{Embedding, HASH_VERSION};
use crate::error::{Error, Result};
use crate::retrieval::{aggregate, axis_scores, AxisWeights};
use crate::world_sim::{Action, TechTree};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.95;
pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub entry_id: u64,
    pub task_name: String,
    pub csd: Csd,
    pub action_sequence: Vec<Action>,
    pub success_count: u32,
    pub attempt_count: u32,
    pub last_success_at: Timestamp,
}

impl MemoryEntry {
    fn check(&self) -> std::result::Result<(), String> {
        if self.success_count == 0 {
            return Err("success_count is zero".into());
        }
        if self.success_count > self.attempt_count {
            return Err("success_count exceeds attempt_count".into());
        }
        if self.action_sequence.is_empty() {
            return Err("empty action sequence".into());
        }
        self.csd.check_coherence()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub task_name: String,
    pub action_sequence: Vec<Action>,
    pub reason: String,
    pub at: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FailureLog {
    pub records: Vec<FailureRecord>,
}

impl FailureLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    embedding_hash: String,
    dim: usize,
    next_entry_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<u64>,
    pub centroid: BTreeMap<Axis, Embedding>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceReport {
    pub cleaned: usize,
    pub merged: usize,
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MemoryBank {
    entries: BTreeMap<u64, MemoryEntry>,
    failures: FailureLog,
    next_id: u64,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Live entries in ascending id order.
    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values()
    }

    pub fn get(&self, id: u64) -> Option<&MemoryEntry> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn failures(&self) -> &FailureLog {
        &self.failures
    }

    /// Store a verified success, merging into an identical experience if present.
    pub fn commit_success(
        &mut self,
        task_name: &str,
        csd: Csd,
        actions: Vec<Action>,
        at: Timestamp,
    ) -> Result<u64> {
        if actions.is_empty() {
            return Err(Error::InvalidInput("cannot commit an empty action sequence".into()));
        }
        if let Some(e) = self
            .entries
            .values_mut()
            .find(|e| e.task_name == task_name && e.csd.canonical_eq(&csd))
        {
            e.success_count += 1;
            e.attempt_count += 1;
            e.last_success_at = e.last_success_at.max(at);
            return Ok(e.entry_id);
        }
        let id = self.next_id;
        self.next_id += 1;
        self.entries.insert(
            id,
            MemoryEntry {
                entry_id: id,
                task_name: task_name.to_string(),
                csd,
                action_sequence: actions,
                success_count: 1,
                attempt_count: 1,
                last_success_at: at,
            },
        );
        Ok(id)
    }

    pub fn log_failure(&mut self, task_name: &str, actions: Vec<Action>, reason: &str, at: Timestamp) {
        self.failures.records.push(FailureRecord {
            task_name: task_name.to_string(),
            action_sequence: actions,
            reason: reason.to_string(),
            at,
        });
    }

    /// Merge later near-duplicates of the same task into earlier entries.
    pub fn deduplicate(&mut self, threshold: f64) -> Result<usize> {
        check_threshold(threshold)?;
        let w = AxisWeights::uniform();
        let ids: Vec<u64> = self.entries.keys().copied().collect();
        let mut removed = 0;
        for (i, &keep) in ids.iter().enumerate() {
            if !self.entries.contains_key(&keep) {
                continue;
            }
            for &other in &ids[i + 1..] {
                let Some(cand) = self.entries.get(&other) else {
                    continue;
                };
                let survivor = &self.entries[&keep];
                if survivor.task_name != cand.task_name
                    || aggregate(&axis_scores(&survivor.csd, &cand.csd), &w) < threshold
                {
                    continue;
                }
                let gone = self.entries.remove(&other).expect("present");
                let s = self.entries.get_mut(&keep).expect("present");
                s.success_count += gone.success_count;
                s.attempt_count += gone.attempt_count;
                s.last_success_at = s.last_success_at.max(gone.last_success_at);
                removed += 1;
            }
        }
        Ok(removed)
    }

    /// Drop entries that mention items, recipes or stations missing from `tree`.
    pub fn clean(&mut self, tree: &TechTree) -> usize {
        let before = self.entries.len();
        self.entries.retain(|_, e| {
            tree.contains(&e.task_name)
                && e.action_sequence.iter().all(|a| match a {
                    Action::Gather { item, .. } => tree.gather_rule(item).is_some(),
                    Action::Craft { recipe } | Action::Smelt { recipe } => tree.recipe(recipe).is_some(),
                    Action::Place { station } => tree.is_station(station),
                })
        });
        before - self.entries.len()
    }

    /// Greedy leader clustering in ascending id order.
    pub fn cluster(&self, threshold: f64) -> Result<ClusterSet> {
        check_threshold(threshold)?;
        let w = AxisWeights::uniform();
        let mut sums: Vec<[Vec<f64>; 5]> = Vec::new();
        let mut centroids: Vec<Csd> = Vec::new();
        let mut members: Vec<Vec<u64>> = Vec::new();
        for e in self.entries.values() {
            let joined = centroids
                .iter()
                .position(|c| aggregate(&axis_scores(c, &e.csd), &w) >= threshold);
            match joined {
                Some(ci) => {
                    for (axis, p) in e.csd.axes() {
                        for (acc, v) in sums[ci][axis.index()].iter_mut().zip(p.embedding().values()) {
                            *acc += v;
                        }
                    }
                    centroids[ci] = centroid_csd(&e.csd, &sums[ci]);
                    members[ci].push(e.entry_id);
                }
                None => {
                    let s: [Vec<f64>; 5] =
                        Axis::ALL.map(|a| e.csd.axis(a).embedding().values().to_vec());
                    centroids.push(centroid_csd(&e.csd, &s));
                    sums.push(s);
                    members.push(vec![e.entry_id]);
                }
            }
        }
        let clusters = members
            .into_iter()
            .zip(centroids)
            .map(|(members, c)| Cluster {
                members,
                centroid: c.axes().map(|(a, p)| (a, p.embedding().clone())).collect(),
            })
            .collect();
        Ok(ClusterSet { clusters })
    }

    /// Clean, deduplicate and cluster.
    pub fn maintain(&mut self, tree: &TechTree, dedup: f64, cluster: f64) -> Result<(MaintenanceReport, ClusterSet)> {
        let cleaned = self.clean(tree);
        let merged = self.deduplicate(dedup)?;
        let set = self.cluster(cluster)?;
        Ok((
            MaintenanceReport {
                cleaned,
                merged,
                clusters: set.clusters.len(),
            },
            set,
        ))
    }

    /// Write the bank and the failure log.
    pub fn save(&self, bank_path: &Path, failures_path: &Path) -> Result<()> {
        let dim = self
            .entries
            .values()
            .next()
            .map(|e| e.csd.dim())
            .unwrap_or(crate::embedding::DEFAULT_DIM);
        let header = Header {
            format_version: FORMAT_VERSION,
            embedding_hash: HASH_VERSION.to_string(),
            dim,
            next_entry_id: self.next_id,
        };
        let mut lines = vec![serde_json::to_string(&header)?];
        for e in self.entries.values() {
            lines.push(serde_json::to_string(e)?);
        }
        write_lines(bank_path, &lines)?;
        let lines = self
            .failures
            .records
            .iter()
            .map(serde_json::to_string)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        write_lines(failures_path, &lines)
    }

    /// Load a bank; a missing failure log is treated as empty.
    pub fn load(bank_path: &Path, failures_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(bank_path)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, message: String| Error::Parse {
            path: bank_path.to_path_buf(),
            line,
            message,
        };
        let corrupt = |line: usize, message: String| Error::Corruption {
            path: bank_path.to_path_buf(),
            line,
            message,
        };
        let (hl, htext) = lines.next().ok_or_else(|| parse_err(1, "missing header line".into()))?;
        let header: Header = serde_json::from_str(htext).map_err(|e| parse_err(hl + 1, e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(corrupt(hl + 1, format!("unsupported format version {}", header.format_version)));
        }
        if header.embedding_hash != HASH_VERSION {
            return Err(corrupt(hl + 1, format!("embedding hash `{}` differs from `{HASH_VERSION}`", header.embedding_hash)));
        }
        let mut entries = BTreeMap::new();
        for (i, l) in lines {
            let lineno = i + 1;
            let e: MemoryEntry = serde_json::from_str(l).map_err(|err| parse_err(lineno, err.to_string()))?;
            e.check().map_err(|m| corrupt(lineno, m))?;
            if e.csd.dim() != header.dim {
                return Err(corrupt(lineno, format!("dimension {} differs from header {}", e.csd.dim(), header.dim)));
            }
            if e.entry_id >= header.next_entry_id {
                return Err(corrupt(lineno, format!("entry id {} not below next id {}", e.entry_id, header.next_entry_id)));
            }
            if entries.insert(e.entry_id, e).is_some() {
                return Err(corrupt(lineno, "duplicate entry id".into()));
            }
        }
        let failures = load_failures(failures_path)?;
        Ok(Self {
            entries,
            failures,
            next_id: header.next_entry_id,
        })
    }
}

fn load_failures(path: &Path) -> Result<FailureLog> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(FailureLog::default()),
        Err(e) => return Err(e.into()),
    };
    let mut records = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(l).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(FailureLog { records })
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        for l in lines {
            f.write_all(l.as_bytes())?;
            f.write_all(b"\n")?;
        }
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("threshold {t} outside (0, 1]")))
    }
}

/// A CSD-shaped holder for centroid embeddings, so retrieval scoring applies unchanged.
fn centroid_csd(template: &Csd, sums: &[Vec<f64>; 5]) -> Csd {
    let mut c = template.clone();
    for axis in Axis::ALL {
        let v = &sums[axis.index()];
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let values = if norm > 0.0 {
            v.iter().map(|x| x / norm).collect()
        } else {
            vec![0.0; v.len()]
        };
        c.set_embedding_unchecked(axis, Embedding::from_values(values));
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csd::fixtures::*;
    use crate::retrieval::retrieve_top_k;

    fn wp() -> Csd {
        built("wooden_pickaxe", &wooden_pickaxe_plan())
    }

    #[test]
    fn repeat_commit_merges() {
        let mut b = MemoryBank::new();
        let a = b.commit_success("wooden_pickaxe", wp(), wooden_pickaxe_plan(), Timestamp::new(1, 0)).unwrap();
        let c = b.commit_success("wooden_pickaxe", wp(), wooden_pickaxe_plan(), Timestamp::new(2, 0)).unwrap();
        assert_eq!(a, c);
        assert_eq!(b.len(), 1);
        assert_eq!(b.get(a).unwrap().success_count, 2);
        assert_eq!(b.get(a).unwrap().last_success_at, Timestamp::new(2, 0));
    }

    #[test]
    fn distinct_tasks_are_separate() {
        let mut b = MemoryBank::new();
        b.commit_success("wooden_pickaxe", wp(), wooden_pickaxe_plan(), Timestamp::default()).unwrap();
        b.commit_success("stone_pickaxe", built("stone_pickaxe", &stone_pickaxe_plan()), stone_pickaxe_plan(), Timestamp::default())
            .unwrap();
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn committed_entry_retrieves_itself() {
        let mut b = MemoryBank::new();
        b.commit_success("stone_pickaxe", built("stone_pickaxe", &stone_pickaxe_plan()), stone_pickaxe_plan(), Timestamp::default())
            .unwrap();
        let id = b.commit_success("wooden_pickaxe", wp(), wooden_pickaxe_plan(), Timestamp::default()).unwrap();
        let r = retrieve_top_k(&wp(), &b, &AxisWeights::uniform(), 2, None).unwrap();
        assert_eq!(r.hits[0].entry_id, id);
        for s in r.hits[0].per_axis.values() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_commit_is_rejected() {
        let mut b = MemoryBank::new();
        assert!(b.commit_success("x", wp(), vec![], Timestamp::default()).is_err());
    }

    #[test]
    fn failures_do_not_touch_entries() {
        let mut b = MemoryBank::new();
        for i in 0..3 {
            b.log_failure("stone_pickaxe", stone_pickaxe_plan(), "missing_tool", Timestamp::new(i, 0));
        }
        assert_eq!(b.failures().len(), 3);
        assert!(b.is_empty());
        b.commit_success("stone_pickaxe", built("stone_pickaxe", &stone_pickaxe_plan()), stone_pickaxe_plan(), Timestamp::new(4, 0))
            .unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.failures().len(), 3);
    }

    /// Build entries bypassing the commit merge, as a bank loaded from older runs could hold.
    fn raw_bank(items: &[(&str, Csd, u32, u32)]) -> MemoryBank {
        let mut b = MemoryBank::new();
        for (i, (task, csd, count, ts)) in items.iter().enumerate() {
            b.entries.insert(
                i as u64,
                MemoryEntry {
                    entry_id: i as u64,
                    task_name: task.to_string(),
                    csd: csd.clone(),
                    action_sequence: vec![Action::gather("oak_log", 1)],
                    success_count: *count,
                    attempt_count: *count,
                    last_success_at: Timestamp::new(*ts, 0),
                },
            );
        }
        b.next_id = items.len() as u64;
        b
    }

    #[test]
    fn dedup_identical_pair() {
        let mut b = raw_bank(&[("wp", wp(), 1, 0), ("wp", wp(), 1, 1)]);
        assert_eq!(b.deduplicate(0.95).unwrap(), 1);
    }

    #[test]
    fn dedup_disjoint_pair() {
        let tree = TechTree::default_tree();
        let other = crate::csd::build_csd(
            &crate::csd::TaskRecord::from_plan("oak_log", &[Action::gather("oak_log", 1)], &tree).unwrap(),
            &crate::world_sim::WorldState::new(0),
            &tree,
        )
        .unwrap();
        let mut b = raw_bank(&[("wp", wp(), 1, 0), ("wp", other, 1, 1)]);
        assert_eq!(b.deduplicate(0.95).unwrap(), 0);
    }

    #[test]
    fn dedup_three_way_matches_pairwise_oracle() {
        let mut b = raw_bank(&[("wp", wp(), 2, 5), ("wp", wp(), 3, 9), ("wp", wp(), 4, 1)]);
        // oracle: every pair scores 1.0, so everything collapses onto id 0
        assert_eq!(b.deduplicate(0.95).unwrap(), 2);
        let e = b.get(0).unwrap();
        assert_eq!(e.success_count, 9);
        assert_eq!(e.attempt_count, 9);
        assert_eq!(e.last_success_at, Timestamp::new(9, 0));
        assert_eq!(b.deduplicate(0.95).unwrap(), 0);
    }

    #[test]
    fn dedup_requires_same_task() {
        let mut b = raw_bank(&[("a", wp(), 1, 0), ("b", wp(), 1, 0)]);
        assert_eq!(b.deduplicate(0.95).unwrap(), 0);
        assert!(b.deduplicate(0.0).is_err());
        assert!(b.deduplicate(1.5).is_err());
    }

    #[test]
    fn cluster_edge_cases() {
        let b = MemoryBank::new();
        assert!(b.cluster(0.85).unwrap().clusters.is_empty());
        let b = raw_bank(&[("wp", wp(), 1, 0)]);
        let set = b.cluster(0.85).unwrap();
        assert_eq!(set.clusters.len(), 1);
        assert_eq!(set.clusters[0].members, vec![0]);
        assert!(b.cluster(0.0).is_err());
    }

    #[test]
    fn clean_drops_entries_outside_catalog() {
        let tree = TechTree::default_tree();
        let mut b = raw_bank(&[("wooden_pickaxe", wp(), 1, 0), ("phantom_item", wp(), 1, 0)]);
        assert_eq!(b.clean(&tree), 1);
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (bp, fp) = (dir.path().join("bank.jsonl"), dir.path().join("fail.jsonl"));
        let mut b = MemoryBank::new();
        b.commit_success("wooden_pickaxe", wp(), wooden_pickaxe_plan(), Timestamp::new(3, 2)).unwrap();
        b.log_failure("stone_pickaxe", stone_pickaxe_plan(), "missing_tool: no pickaxe", Timestamp::new(4, 1));
        b.save(&bp, &fp).unwrap();
        let back = MemoryBank::load(&bp, &fp).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.failures().records[0].reason, "missing_tool: no pickaxe");
        for (x, y) in back.entries().zip(b.entries()) {
            for axis in Axis::ALL {
                assert!(x.csd.axis(axis).embedding().bit_eq(y.csd.axis(axis).embedding()));
            }
        }
    }

    #[test]
    fn empty_bank_with_header_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (bp, fp) = (dir.path().join("bank.jsonl"), dir.path().join("fail.jsonl"));
        MemoryBank::new().save(&bp, &fp).unwrap();
        let back = MemoryBank::load(&bp, &fp).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn tampered_float_is_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let (bp, fp) = (dir.path().join("bank.jsonl"), dir.path().join("fail.jsonl"));
        let mut b = MemoryBank::new();
        b.commit_success("wooden_pickaxe", wp(), wooden_pickaxe_plan(), Timestamp::default()).unwrap();
        b.save(&bp, &fp).unwrap();
        let text = fs::read_to_string(&bp).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut v: serde_json::Value = serde_json::from_str(&lines[1]).unwrap();
        let emb = v["csd"]["func"]["embedding"].as_array_mut().unwrap();
        let idx = emb.iter().position(|x| x.as_f64().unwrap() != 0.0).unwrap();
        let x = emb[idx].as_f64().unwrap();
        emb[idx] = serde_json::json!(-x);
        lines[1] = serde_json::to_string(&v).unwrap();
        fs::write(&bp, lines.join("\n")).unwrap();
        let err = MemoryBank::load(&bp, &fp).unwrap_err();
        assert!(matches!(err, Error::Corruption { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let (bp, fp) = (dir.path().join("bank.jsonl"), dir.path().join("fail.jsonl"));
        let mut b = MemoryBank::new();
        b.commit_success("wooden_pickaxe", wp(), wooden_pickaxe_plan(), Timestamp::default()).unwrap();
        b.save(&bp, &fp).unwrap();
        let mut text = fs::read_to_string(&bp).unwrap();
        text.push_str("{not json\n");
        fs::write(&bp, text).unwrap();
        let err = MemoryBank::load(&bp, &fp).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }
}
