//! Paired-seed experiment harness: arms, ablations, k sweeps and tabular output.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent_loop::{default_curriculum, run_curriculum, AgentConfig, EpisodeConfig, EpisodeResult, RunReport};
use crate::csd::Axis;
use crate::error::{Error, Result};
use crate::ical_engine::{BuiltinPolicy, LicensingConfig};
use crate::retrieval::{AxisWeights, DEFAULT_K};
use crate::world_sim::TechTree;

/// Row label for metrics over every goal family.
pub const ALL_FAMILIES: &str = "all";

/// Percentage of successes among the first `min(n, len)` results.
pub fn success_at(results: &[EpisodeResult], n: usize) -> f64 {
    let m = n.min(results.len());
    if m == 0 {
        return 0.0;
    }
    let wins = results[..m].iter().filter(|r| r.success).count();
    100.0 * wins as f64 / m as f64
}

/// Success rate on `family` among the first `n` goal episodes, if any belong to it.
pub fn family_success_at(goal_results: &[EpisodeResult], family: &str, n: usize) -> Option<f64> {
    let of: Vec<EpisodeResult> = goal_results
        .iter()
        .take(n)
        .filter(|r| family == ALL_FAMILIES || r.family.as_deref() == Some(family))
        .cloned()
        .collect();
    (!of.is_empty()).then(|| success_at(&of, of.len()))
}

/// One experimental arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmConfig {
    pub name: String,
    pub agent: AgentConfig,
    pub k: usize,
    pub weights: AxisWeights,
    pub licensing: LicensingConfig,
    pub episodes: usize,
}

impl ArmConfig {
    pub fn new(name: impl Into<String>, transfer: bool) -> Self {
        Self {
            name: name.into(),
            agent: AgentConfig {
                transfer,
                ..AgentConfig::default()
            },
            k: DEFAULT_K,
            weights: AxisWeights::uniform(),
            licensing: LicensingConfig::default(),
            episodes: crate::agent_loop::DEFAULT_EPISODES,
        }
    }

    pub fn episode_configs(&self, tree: &TechTree, seed: u64) -> Vec<EpisodeConfig> {
        default_curriculum(tree, seed, self.episodes)
            .into_iter()
            .map(|g| EpisodeConfig {
                k: self.k,
                weights: self.weights,
                ..EpisodeConfig::goal(g)
            })
            .collect()
    }
}

/// Run one arm over every seed; results come back in seed order.
pub fn run_arm(arm: &ArmConfig, seeds: &[u64], tree: &TechTree) -> Result<Vec<RunReport>> {
    let policy = BuiltinPolicy::new(arm.licensing.clone());
    seeds
        .par_iter()
        .map(|&seed| run_curriculum(&arm.episode_configs(tree, seed), seed, tree, &arm.agent, &policy))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub family: String,
    pub config: String,
    pub seeds: usize,
    pub success_at_10_mean: f64,
    pub success_at_10_std: f64,
    pub success_at_30_mean: f64,
    pub success_at_30_std: f64,
    pub episodes_to_milestone_mean: f64,
    pub episodes_to_milestone_std: f64,
}

pub const CSV_HEADER: [&str; 9] = [
    "family",
    "config",
    "seeds",
    "success_at_10_mean",
    "success_at_10_std",
    "success_at_30_mean",
    "success_at_30_std",
    "episodes_to_milestone_mean",
    "episodes_to_milestone_std",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn row(&self, family: &str, config: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.family == family && r.config == config)
    }
}

/// Mean and population standard deviation; zeros when empty.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn families(tree: &TechTree) -> Vec<String> {
    let mut fams: BTreeSet<String> = BTreeSet::new();
    for (_, f) in tree.goal_items() {
        fams.insert(f.to_string());
    }
    std::iter::once(ALL_FAMILIES.to_string()).chain(fams).collect()
}

/// One row per family (plus the overall row) for an arm's reports.
pub fn summarize(config: &str, reports: &[RunReport], episodes: usize, tree: &TechTree) -> Vec<MetricRow> {
    let goal: Vec<Vec<EpisodeResult>> = reports.iter().map(|r| r.goal_results().cloned().collect()).collect();
    let milestone: Vec<f64> = reports.iter().map(|r| r.episodes_to_milestone(episodes)).collect();
    let (m_mean, m_std) = mean_std(&milestone);
    families(tree)
        .into_iter()
        .map(|family| {
            let at = |n| -> Vec<f64> { goal.iter().filter_map(|g| family_success_at(g, &family, n)).collect() };
            let (s10, s30) = (at(10), at(30));
            let (a, b) = (mean_std(&s10), mean_std(&s30));
            MetricRow {
                seeds: s30.len(),
                family,
                config: config.to_string(),
                success_at_10_mean: a.0,
                success_at_10_std: a.1,
                success_at_30_mean: b.0,
                success_at_30_std: b.1,
                episodes_to_milestone_mean: m_mean,
                episodes_to_milestone_std: m_std,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    KeepOnly,
    Remove,
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "keep_only" | "keep-only" => Ok(AblationMode::KeepOnly),
            "remove" => Ok(AblationMode::Remove),
            _ => Err(Error::InvalidInput(format!("unknown ablation mode `{s}`"))),
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::KeepOnly => "keep_only",
            AblationMode::Remove => "remove",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub mode: AblationMode,
    pub axis: Axis,
}

impl AblationSpec {
    pub fn weights(&self) -> AxisWeights {
        match self.mode {
            AblationMode::KeepOnly => AxisWeights::keep_only(self.axis),
            AblationMode::Remove => AxisWeights::remove(self.axis),
        }
    }

    pub fn licensing(&self, base: &LicensingConfig) -> LicensingConfig {
        let axes = match self.mode {
            AblationMode::KeepOnly => base.axes.iter().copied().filter(|a| *a == self.axis).collect(),
            AblationMode::Remove => base.axes.iter().copied().filter(|a| *a != self.axis).collect(),
        };
        LicensingConfig { axes, ..base.clone() }
    }

    pub fn label(&self) -> String {
        format!("{}({})", self.mode, self.axis.key())
    }
}

/// Goal family whose success an axis is expected to drive.
pub fn associated_family(axis: Axis) -> &'static str {
    match axis {
        Axis::Structural | Axis::Procedural => "crafting_chain",
        Axis::Attribute => "recipe",
        Axis::Functional => "functional_eq",
        Axis::Interaction => "utility_blocks",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDelta {
    pub family: String,
    /// Ablated minus baseline, in percentage points.
    pub delta_success_at_10: f64,
    pub delta_success_at_30: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub spec: AblationSpec,
    pub seeds: Vec<u64>,
    pub baseline: Vec<MetricRow>,
    pub ablated: Vec<MetricRow>,
    pub deltas: Vec<FamilyDelta>,
}

impl AblationReport {
    pub fn delta(&self, family: &str) -> Option<&FamilyDelta> {
        self.deltas.iter().find(|d| d.family == family)
    }
}

/// Paired per-family deltas; seeds where a family is absent are skipped.
fn paired_deltas(base: &[RunReport], abl: &[RunReport], tree: &TechTree) -> Vec<FamilyDelta> {
    families(tree)
        .into_iter()
        .map(|family| {
            let diff = |n| -> f64 {
                let d: Vec<f64> = base
                    .iter()
                    .zip(abl)
                    .filter_map(|(b, a)| {
                        let bg: Vec<EpisodeResult> = b.goal_results().cloned().collect();
                        let ag: Vec<EpisodeResult> = a.goal_results().cloned().collect();
                        Some(family_success_at(&ag, &family, n)? - family_success_at(&bg, &family, n)?)
                    })
                    .collect();
                mean_std(&d).0
            };
            FamilyDelta {
                delta_success_at_10: diff(10),
                delta_success_at_30: diff(30),
                family,
            }
        })
        .collect()
}

pub fn run_ablation(spec: AblationSpec, base: &ArmConfig, seeds: &[u64], tree: &TechTree) -> Result<AblationReport> {
    Ok(run_ablations(&[spec], base, seeds, tree)?.remove(0))
}

/// Several ablations against one shared baseline run.
pub fn run_ablations(
    specs: &[AblationSpec],
    base: &ArmConfig,
    seeds: &[u64],
    tree: &TechTree,
) -> Result<Vec<AblationReport>> {
    let b = run_arm(base, seeds, tree)?;
    let baseline = summarize(&base.name, &b, base.episodes, tree);
    specs
        .iter()
        .map(|&spec| {
            let arm = ArmConfig {
                name: spec.label(),
                weights: spec.weights(),
                licensing: spec.licensing(&base.licensing),
                ..base.clone()
            };
            let a = run_arm(&arm, seeds, tree)?;
            Ok(AblationReport {
                spec,
                seeds: seeds.to_vec(),
                baseline: baseline.clone(),
                ablated: summarize(&arm.name, &a, base.episodes, tree),
                deltas: paired_deltas(&b, &a, tree),
            })
        })
        .collect()
}

pub fn run_kshot_sweep(ks: &[usize], base: &ArmConfig, seeds: &[u64], tree: &TechTree) -> Result<MetricsTable> {
    if ks.is_empty() {
        return Err(Error::InvalidInput("k sweep needs at least one k".into()));
    }
    let mut rows = Vec::new();
    for &k in ks {
        let arm = ArmConfig {
            name: format!("k={k}"),
            k,
            ..base.clone()
        };
        rows.extend(summarize(&arm.name, &run_arm(&arm, seeds, tree)?, arm.episodes, tree));
    }
    Ok(MetricsTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::InvalidInput(format!("unknown format `{s}`"))),
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn table_csv(table: &MetricsTable) -> Result<String> {
    // header written by hand so an empty table still gets one
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in &table.rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Unlock time series of several runs as `seed,step,episode,unlocked_count` rows.
pub fn series_csv(reports: &[RunReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "step", "episode", "unlocked_count"])?;
    for r in reports {
        for p in &r.unlock_series {
            w.write_record([
                r.seed.to_string(),
                p.step.to_string(),
                p.episode.to_string(),
                p.unlocked_count.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Write a table in the requested format.
pub fn emit(table: &MetricsTable, format: Format, path: &Path) -> Result<()> {
    let text = match format {
        Format::Json => to_json(table)?,
        Format::Csv => table_csv(table)?,
    };
    fs::write(path, text)?;
    Ok(())
}
