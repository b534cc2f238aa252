//! Analogical task induction: seed selection, context construction, policy
//! proposals, pattern abstraction and the induce-verify-execute round.

mod external;
mod pattern;
mod policy;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use external::{render_context, Endpoint, ExternalPolicy};
pub use pattern::{abstract_pattern, PatternStep, PatternTemplate, TemplateVar};
pub use policy::{BuiltinPolicy, LicensingConfig, DEFAULT_BUDGET, DEFAULT_FUNCTION_THRESHOLD};

use crate::csd::{Axis, CsdBuilder, TaskRecord, Timestamp};
use crate::embedding::Encoder;
use crate::error::{Error, Result};
use crate::memory_bank::{MemoryBank, MemoryEntry};
use crate::retrieval::{retrieve_top_k, AxisScores, AxisWeights, RetrievalResult, DEFAULT_K};
use crate::verifier::{verify, Assertion, VerificationReport};
use crate::world_sim::{execute, Action, TechTree, Trace, WorldState};

/// Identifier of the context template.
pub const PROTOCOL_ID: &str = "ical-context-v1";

/// Everything the policy sees: a seed, ranked exemplars with their evidence,
/// and optionally the goal being pursued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclContext {
    pub seed: MemoryEntry,
    pub exemplars: Vec<MemoryEntry>,
    pub evidence: Vec<AxisScores>,
    pub protocol: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<String>,
}

impl IclContext {
    /// Seed first, then exemplars in rank order.
    pub fn sources(&self) -> impl Iterator<Item = &MemoryEntry> {
        std::iter::once(&self.seed).chain(self.exemplars.iter())
    }

    pub fn with_goal(mut self, goal: impl Into<String>) -> Self {
        self.goal = Some(goal.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Substitution {
    pub from: String,
    pub to: String,
    pub axis: Axis,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_entry_id: u64,
    pub substitutions: Vec<Substitution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskProposal {
    pub goal_item: String,
    pub plan: Vec<Action>,
    pub asserts: Vec<Assertion>,
    pub provenance: Provenance,
}

/// A frozen planner mapping a context to candidate tasks.
pub trait PolicyModel: Send + Sync {
    fn propose(&self, ctx: &IclContext, state: &WorldState, tree: &TechTree) -> Vec<TaskProposal>;

    /// Whether identical inputs always give identical proposals.
    fn is_deterministic(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedStrategy {
    MostSuccessful,
    #[default]
    MostRecent,
}

impl FromStr for SeedStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "most_successful" => Ok(SeedStrategy::MostSuccessful),
            "most_recent" => Ok(SeedStrategy::MostRecent),
            _ => Err(Error::InvalidInput(format!("unknown seed strategy `{s}`"))),
        }
    }
}

impl fmt::Display for SeedStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeedStrategy::MostSuccessful => "most_successful",
            SeedStrategy::MostRecent => "most_recent",
        })
    }
}

pub fn select_seed_task(bank: &MemoryBank, strategy: SeedStrategy) -> Result<&MemoryEntry> {
    // entries iterate by ascending id, and max_by keeps the last maximum, so
    // compare ids in reverse to prefer the lowest one
    let best = match strategy {
        SeedStrategy::MostSuccessful => bank.entries().max_by(|a, b| {
            a.success_count
                .cmp(&b.success_count)
                .then(a.last_success_at.cmp(&b.last_success_at))
                .then(b.entry_id.cmp(&a.entry_id))
        }),
        SeedStrategy::MostRecent => bank.entries().max_by(|a, b| {
            a.last_success_at
                .cmp(&b.last_success_at)
                .then(b.entry_id.cmp(&a.entry_id))
        }),
    };
    best.ok_or(Error::NoSeed)
}

pub fn construct_context(
    seed: &MemoryEntry,
    result: &RetrievalResult,
    bank: &MemoryBank,
    protocol: &str,
) -> Result<IclContext> {
    let mut exemplars = Vec::with_capacity(result.hits.len());
    let mut evidence = Vec::with_capacity(result.hits.len());
    for hit in &result.hits {
        if hit.entry_id == seed.entry_id {
            return Err(Error::Consistency(format!("seed {} appears among its own exemplars", seed.entry_id)));
        }
        let e = bank
            .get(hit.entry_id)
            .ok_or_else(|| Error::Consistency(format!("retrieved entry {} is not in the bank", hit.entry_id)))?;
        exemplars.push(e.clone());
        evidence.push(hit.per_axis.clone());
    }
    Ok(IclContext {
        seed: seed.clone(),
        exemplars,
        evidence,
        protocol: protocol.to_string(),
        goal: None,
    })
}

/// Rule-based proposals with default licensing.
pub fn propose_analogical(ctx: &IclContext, state: &WorldState, tree: &TechTree) -> Vec<TaskProposal> {
    BuiltinPolicy::default().propose(ctx, state, tree)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InduceConfig {
    pub k: usize,
    pub weights: AxisWeights,
    pub strategy: SeedStrategy,
    pub budget: usize,
}

impl Default for InduceConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            weights: AxisWeights::uniform(),
            strategy: SeedStrategy::MostRecent,
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialOutcome {
    /// Goal already unlocked; nothing executed.
    Skipped,
    /// Verifier rejected the plan; logged as a failure.
    Rejected,
    Executed {
        trace: Trace,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        committed: Option<u64>,
        newly_unlocked: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub proposal: TaskProposal,
    pub report: VerificationReport,
    pub outcome: TrialOutcome,
}

/// One proactive round: seed, retrieve, propose, verify, execute, commit.
pub fn induce_and_trial(
    bank: &mut MemoryBank,
    state: &mut WorldState,
    tree: &TechTree,
    cfg: &InduceConfig,
    policy: &dyn PolicyModel,
) -> Result<Vec<Trial>> {
    let seed = select_seed_task(bank, cfg.strategy)?.clone();
    let result = retrieve_top_k(&seed.csd, bank, &cfg.weights, cfg.k.max(1), Some(&seed.task_name))?;
    let ctx = construct_context(&seed, &result, bank, PROTOCOL_ID)?;
    let proposals = policy.propose(&ctx, state, tree);
    let builder = CsdBuilder::new(tree, Encoder::new(seed.csd.dim())?);
    let mut trials = Vec::new();
    for proposal in proposals.into_iter().take(cfg.budget) {
        let report = verify(&proposal.plan, &proposal.asserts, state, tree);
        let outcome = if state.unlocked.contains(&proposal.goal_item) {
            TrialOutcome::Skipped
        } else if !report.passed() {
            let reason = report
                .violations
                .first()
                .map(|v| format!("verifier:{}", v.reason.as_str()))
                .unwrap_or_default();
            bank.log_failure(&proposal.goal_item, proposal.plan.clone(), &reason, stamp(state));
            TrialOutcome::Rejected
        } else {
            run_and_record(bank, state, &builder, &proposal.goal_item, &proposal.plan)?
        };
        trials.push(Trial {
            proposal,
            report,
            outcome,
        });
    }
    Ok(trials)
}

pub(crate) fn stamp(state: &WorldState) -> Timestamp {
    Timestamp::new(state.episode, state.episode_step)
}

/// Execute a plan, committing on success and logging on failure.
pub(crate) fn run_and_record(
    bank: &mut MemoryBank,
    state: &mut WorldState,
    builder: &CsdBuilder<'_>,
    goal: &str,
    plan: &[Action],
) -> Result<TrialOutcome> {
    let before: BTreeSet<String> = state.unlocked.clone();
    let had = state.count(goal);
    let trace = execute(plan, state, builder.tree(), goal);
    let newly_unlocked: Vec<String> = state.unlocked.difference(&before).cloned().collect();
    let committed = if trace.success && state.count(goal) > had {
        let actions = trace.executed_actions();
        let record = TaskRecord::from_plan(goal, &actions, builder.tree())?;
        let csd = builder.build(&record, state)?;
        Some(bank.commit_success(goal, csd, actions, stamp(state))?)
    } else {
        let reason = match trace.first_failure() {
            Some((_, r)) => r.as_str().to_string(),
            None => "goal_not_obtained".to_string(),
        };
        bank.log_failure(goal, plan.to_vec(), &reason, stamp(state));
        None
    };
    Ok(TrialOutcome::Executed {
        trace,
        committed,
        newly_unlocked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csd::fixtures::*;
    use crate::world_sim::Action;

    fn entry(id: u64, count: u32, ts: u32) -> MemoryEntry {
        MemoryEntry {
            entry_id: id,
            task_name: format!("t{id}"),
            csd: built("stick", &[]),
            action_sequence: vec![Action::gather("oak_log", 1)],
            success_count: count,
            attempt_count: count,
            last_success_at: Timestamp::new(ts, 0),
        }
    }

    fn bank_with(entries: Vec<MemoryEntry>) -> MemoryBank {
        let mut b = MemoryBank::new();
        for e in entries {
            let id = b.commit_success(&e.task_name, e.csd.clone(), e.action_sequence.clone(), e.last_success_at).unwrap();
            for _ in 1..e.success_count {
                b.commit_success(&e.task_name, e.csd.clone(), e.action_sequence.clone(), Timestamp::default()).unwrap();
            }
            assert_eq!(id, e.entry_id);
        }
        b
    }

    #[test]
    fn seed_from_single_entry() {
        let b = bank_with(vec![entry(0, 1, 0)]);
        assert_eq!(select_seed_task(&b, SeedStrategy::MostSuccessful).unwrap().entry_id, 0);
        assert_eq!(select_seed_task(&b, SeedStrategy::MostRecent).unwrap().entry_id, 0);
    }

    #[test]
    fn most_successful_breaks_ties_by_recency() {
        let b = bank_with(vec![entry(0, 3, 9), entry(1, 5, 4), entry(2, 5, 7)]);
        assert_eq!(select_seed_task(&b, SeedStrategy::MostSuccessful).unwrap().entry_id, 2);
    }

    #[test]
    fn most_recent_picks_latest() {
        let b = bank_with(vec![entry(0, 1, 1), entry(1, 1, 2), entry(2, 1, 3)]);
        assert_eq!(select_seed_task(&b, SeedStrategy::MostRecent).unwrap().entry_id, 2);
        let b = bank_with(vec![entry(0, 1, 3), entry(1, 1, 3)]);
        assert_eq!(select_seed_task(&b, SeedStrategy::MostRecent).unwrap().entry_id, 0);
    }

    #[test]
    fn empty_bank_has_no_seed() {
        assert!(matches!(select_seed_task(&MemoryBank::new(), SeedStrategy::MostRecent), Err(Error::NoSeed)));
    }

    #[test]
    fn context_follows_result_order() {
        let b = bank_with(vec![entry(0, 1, 1), entry(1, 1, 2), entry(2, 1, 3)]);
        let seed = b.get(0).unwrap();
        let empty = RetrievalResult {
            hits: vec![],
            query_fingerprint: 0,
        };
        assert!(construct_context(seed, &empty, &b, PROTOCOL_ID).unwrap().exemplars.is_empty());
        let r = retrieve_top_k(&seed.csd, &b, &AxisWeights::uniform(), 2, Some("t0")).unwrap();
        let ctx = construct_context(seed, &r, &b, PROTOCOL_ID).unwrap();
        let ids: Vec<u64> = ctx.exemplars.iter().map(|e| e.entry_id).collect();
        assert_eq!(ids, r.ids());
        assert!(ctx.evidence.iter().all(|m| m.len() == 5));
    }

    #[test]
    fn context_rejects_dangling_and_seed_ids() {
        let b = bank_with(vec![entry(0, 1, 1)]);
        let seed = b.get(0).unwrap();
        let mut r = retrieve_top_k(&seed.csd, &b, &AxisWeights::uniform(), 1, None).unwrap();
        assert!(matches!(construct_context(seed, &r, &b, PROTOCOL_ID), Err(Error::Consistency(_))));
        r.hits[0].entry_id = 42;
        assert!(matches!(construct_context(seed, &r, &b, PROTOCOL_ID), Err(Error::Consistency(_))));
    }
}
