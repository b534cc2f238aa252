//! Episode driver: retrieve, propose, verify, execute, remember.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csd::{CsdBuilder, TaskRecord};
use crate::embedding::Encoder;
use crate::error::{Error, Result};
use crate::ical_engine::{
    construct_context, induce_and_trial, run_and_record, stamp, InduceConfig, PolicyModel, Provenance, SeedStrategy,
    TrialOutcome, DEFAULT_BUDGET, PROTOCOL_ID,
};
use crate::memory_bank::{MemoryBank, DEFAULT_CLUSTER_THRESHOLD, DEFAULT_DEDUP_THRESHOLD};
use crate::planner::{height, Planner, DEFAULT_DEPTH};
use crate::retrieval::{retrieve_top_k, AxisWeights, RetrievalResult, DEFAULT_K};
use crate::verifier::verify;
use crate::world_sim::{Action, TechTree, WorldState};

/// Items whose joint unlock marks the end of the tool-progression spine.
pub const MILESTONES: [&str; 5] = ["stone_pickaxe", "furnace", "iron_ingot", "iron_pickaxe", "iron_sword"];

pub const DEFAULT_EPISODES: usize = 30;

/// Fraction of curriculum positions permuted per seed.
const SHUFFLE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "item", rename_all = "snake_case")]
pub enum Task {
    Goal(String),
    /// An induction round with no external goal.
    Proactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub task: Task,
    pub action_budget: usize,
    pub k: usize,
    pub weights: AxisWeights,
    pub replan_attempts: usize,
    pub maintenance_every: u32,
}

impl EpisodeConfig {
    pub fn goal(item: impl Into<String>) -> Self {
        Self {
            task: Task::Goal(item.into()),
            action_budget: 64,
            k: DEFAULT_K,
            weights: AxisWeights::uniform(),
            replan_attempts: 1,
            maintenance_every: 10,
        }
    }

    pub fn proactive() -> Self {
        Self {
            task: Task::Proactive,
            ..Self::goal("")
        }
    }

    fn check(&self) -> Result<()> {
        if self.action_budget == 0 || self.k == 0 || self.maintenance_every == 0 {
            return Err(Error::InvalidInput("episode budgets must be at least 1".into()));
        }
        Ok(())
    }
}

/// Settings shared by every episode of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Use memory for goal episodes and run induction rounds between them.
    pub transfer: bool,
    pub planner_depth: u32,
    pub induce_budget: usize,
    pub strategy: SeedStrategy,
    pub dedup_threshold: f64,
    pub cluster_threshold: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            transfer: true,
            planner_depth: DEFAULT_DEPTH,
            induce_budget: DEFAULT_BUDGET,
            strategy: SeedStrategy::MostRecent,
            dedup_threshold: DEFAULT_DEDUP_THRESHOLD,
            cluster_threshold: DEFAULT_CLUSTER_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Planned,
    Transferred,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: u32,
    pub goal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    pub success: bool,
    pub steps_used: usize,
    pub newly_unlocked: Vec<String>,
    pub verifier_failures: usize,
    pub source: PlanSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<Provenance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub committed: Vec<u64>,
}

impl EpisodeResult {
    fn empty(episode: u32, goal: Option<String>, tree: &TechTree) -> Self {
        Self {
            episode,
            family: goal.as_deref().and_then(|g| tree.goal_family(g)).map(str::to_string),
            goal,
            success: false,
            steps_used: 0,
            newly_unlocked: vec![],
            verifier_failures: 0,
            source: PlanSource::None,
            provenance: vec![],
            committed: vec![],
        }
    }

    pub fn is_goal(&self) -> bool {
        self.goal.is_some()
    }
}

/// Run one episode at index `state.episode`.
pub fn run_episode(
    cfg: &EpisodeConfig,
    agent: &AgentConfig,
    state: &mut WorldState,
    bank: &mut MemoryBank,
    tree: &TechTree,
    policy: &dyn PolicyModel,
) -> Result<EpisodeResult> {
    cfg.check()?;
    state.episode_step = 0;
    let result = match &cfg.task {
        Task::Goal(goal) => goal_episode(goal, cfg, agent, state, bank, tree, policy)?,
        Task::Proactive => proactive_episode(cfg, agent, state, bank, tree, policy)?,
    };
    if state.episode.is_multiple_of(cfg.maintenance_every) {
        let (report, _) = bank.maintain(tree, agent.dedup_threshold, agent.cluster_threshold)?;
        log::debug!("maintenance at episode {}: {report:?}", state.episode);
    }
    Ok(result)
}

fn builder_for<'a>(bank: &MemoryBank, tree: &'a TechTree) -> Result<CsdBuilder<'a>> {
    let dim = bank.entries().next().map_or(Ok(Encoder::default()), |e| Encoder::new(e.csd.dim()))?;
    Ok(CsdBuilder::new(tree, dim))
}

/// Ranked transfer candidates for `goal`, best first.
fn transferred_candidates(
    goal: &str,
    cfg: &EpisodeConfig,
    state: &WorldState,
    bank: &MemoryBank,
    builder: &CsdBuilder<'_>,
    policy: &dyn PolicyModel,
) -> Result<Vec<crate::ical_engine::TaskProposal>> {
    if bank.is_empty() {
        return Ok(vec![]);
    }
    let query = builder.build(&TaskRecord::sketch(goal, builder.tree())?, state)?;
    let hits = retrieve_top_k(&query, bank, &cfg.weights, cfg.k, None)?;
    let Some((first, rest)) = hits.hits.split_first() else {
        return Ok(vec![]);
    };
    let seed = bank
        .get(first.entry_id)
        .ok_or_else(|| Error::Consistency(format!("retrieved entry {} is not in the bank", first.entry_id)))?;
    let rest = RetrievalResult {
        hits: rest.to_vec(),
        query_fingerprint: hits.query_fingerprint,
    };
    let ctx = construct_context(seed, &rest, bank, PROTOCOL_ID)?.with_goal(goal);
    Ok(policy.propose(&ctx, state, builder.tree()))
}

fn goal_episode(
    goal: &str,
    cfg: &EpisodeConfig,
    agent: &AgentConfig,
    state: &mut WorldState,
    bank: &mut MemoryBank,
    tree: &TechTree,
    policy: &dyn PolicyModel,
) -> Result<EpisodeResult> {
    let mut res = EpisodeResult::empty(state.episode, Some(goal.to_string()), tree);
    if !tree.contains(goal) {
        bank.log_failure(goal, vec![], "unknown_item", stamp(state));
        return Ok(res);
    }
    let builder = builder_for(bank, tree)?;

    let mut chosen: Option<(Vec<Action>, PlanSource, Option<Provenance>)> = None;
    if agent.transfer {
        let candidates = transferred_candidates(goal, cfg, state, bank, &builder, policy)?;
        for p in candidates.into_iter().take(1 + cfg.replan_attempts) {
            let report = verify(&p.plan, &p.asserts, state, tree);
            if report.passed() && p.plan.len() <= cfg.action_budget {
                chosen = Some((p.plan, PlanSource::Transferred, Some(p.provenance)));
                break;
            }
            res.verifier_failures += 1;
            let reason = report
                .violations
                .first()
                .map_or("action_budget".to_string(), |v| format!("verifier:{}", v.reason.as_str()));
            bank.log_failure(goal, p.plan, &reason, stamp(state));
        }
    }
    if chosen.is_none() {
        let target = state.count(goal) + 1;
        chosen = Planner::new(tree, agent.planner_depth)
            .plan(goal, target, state)
            .map(|p| (p, PlanSource::Planned, None));
    }
    let Some((plan, source, provenance)) = chosen else {
        bank.log_failure(goal, vec![], "no_plan", stamp(state));
        return Ok(res);
    };
    res.source = source;
    res.provenance.extend(provenance);
    if plan.len() > cfg.action_budget {
        bank.log_failure(goal, plan, "action_budget", stamp(state));
        return Ok(res);
    }
    if let TrialOutcome::Executed {
        trace,
        committed,
        newly_unlocked,
    } = run_and_record(bank, state, &builder, goal, &plan)?
    {
        res.steps_used = trace.steps_used;
        res.newly_unlocked = newly_unlocked;
        res.success = committed.is_some();
        res.committed.extend(committed);
    }
    Ok(res)
}

fn proactive_episode(
    cfg: &EpisodeConfig,
    agent: &AgentConfig,
    state: &mut WorldState,
    bank: &mut MemoryBank,
    tree: &TechTree,
    policy: &dyn PolicyModel,
) -> Result<EpisodeResult> {
    let mut res = EpisodeResult::empty(state.episode, None, tree);
    res.source = PlanSource::Transferred;
    if bank.is_empty() {
        res.source = PlanSource::None;
        return Ok(res);
    }
    let icfg = InduceConfig {
        k: cfg.k,
        weights: cfg.weights,
        strategy: agent.strategy,
        budget: agent.induce_budget,
    };
    for trial in induce_and_trial(bank, state, tree, &icfg, policy)? {
        match trial.outcome {
            TrialOutcome::Skipped => {}
            TrialOutcome::Rejected => res.verifier_failures += 1,
            TrialOutcome::Executed {
                trace,
                committed,
                newly_unlocked,
            } => {
                res.steps_used += trace.steps_used;
                res.newly_unlocked.extend(newly_unlocked);
                if let Some(id) = committed {
                    res.success = true;
                    res.committed.push(id);
                    res.provenance.push(trial.proposal.provenance);
                }
            }
        }
    }
    Ok(res)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlockPoint {
    pub step: u64,
    pub episode: u32,
    pub unlocked_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub transfer: bool,
    pub results: Vec<EpisodeResult>,
    pub unlock_series: Vec<UnlockPoint>,
    /// First episode by whose end every milestone was unlocked.
    pub milestones_at: Option<u32>,
    pub unlocked: BTreeSet<String>,
    pub bank_size: usize,
}

impl RunReport {
    pub fn goal_results(&self) -> impl Iterator<Item = &EpisodeResult> {
        self.results.iter().filter(|r| r.is_goal())
    }

    /// Episodes needed for the milestone set, censored at `episodes + 1`.
    pub fn episodes_to_milestone(&self, episodes: usize) -> f64 {
        self.milestones_at.map_or(episodes as f64 + 1.0, |e| e as f64 + 1.0)
    }
}

/// Goals ordered by depth from a fresh world, with a seeded fraction of
/// positions permuted, cycled to `episodes` entries.
pub fn default_curriculum(tree: &TechTree, seed: u64, episodes: usize) -> Vec<String> {
    let fresh = WorldState::new(seed);
    let mut goals: Vec<(u32, String)> = tree
        .goal_items()
        .into_iter()
        .map(|(item, _)| (height(tree, item, &fresh).unwrap_or(u32::MAX), item.to_string()))
        .collect();
    goals.sort();
    let mut goals: Vec<String> = goals.into_iter().map(|(_, g)| g).collect();
    if goals.is_empty() {
        return vec![];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ((goals.len() as f64) * SHUFFLE_FRACTION).round() as usize;
    let mut positions: Vec<usize> = (0..goals.len()).collect();
    positions.shuffle(&mut rng);
    positions.truncate(n);
    positions.sort_unstable();
    let mut picked: Vec<String> = positions.iter().map(|&i| goals[i].clone()).collect();
    picked.shuffle(&mut rng);
    for (&i, g) in positions.iter().zip(picked) {
        goals[i] = g;
    }
    goals.iter().cycle().take(episodes).cloned().collect()
}

/// Fold goal episodes over one world, interleaving an induction round after
/// each goal episode when transfer is on.
pub fn run_curriculum(
    episodes: &[EpisodeConfig],
    seed: u64,
    tree: &TechTree,
    agent: &AgentConfig,
    policy: &dyn PolicyModel,
) -> Result<RunReport> {
    let mut state = WorldState::new(seed);
    let mut bank = MemoryBank::new();
    run_curriculum_with(episodes, seed, tree, agent, policy, &mut state, &mut bank)
}

/// As [`run_curriculum`], continuing from a given state and bank.
pub fn run_curriculum_with(
    episodes: &[EpisodeConfig],
    seed: u64,
    tree: &TechTree,
    agent: &AgentConfig,
    policy: &dyn PolicyModel,
    state: &mut WorldState,
    bank: &mut MemoryBank,
) -> Result<RunReport> {
    let mut results = Vec::new();
    let mut series = Vec::new();
    let mut milestones_at = None;
    let start = state.episode;
    for (i, cfg) in episodes.iter().enumerate() {
        state.episode = start + i as u32;
        results.push(run_episode(cfg, agent, state, bank, tree, policy)?);
        if agent.transfer && matches!(cfg.task, Task::Goal(_)) && !bank.is_empty() {
            let round = EpisodeConfig {
                task: Task::Proactive,
                maintenance_every: u32::MAX,
                ..cfg.clone()
            };
            results.push(run_episode(&round, agent, state, bank, tree, policy)?);
        }
        series.push(UnlockPoint {
            step: state.total_steps,
            episode: state.episode,
            unlocked_count: state.unlocked_count(),
        });
        if milestones_at.is_none() && MILESTONES.iter().all(|m| state.unlocked.contains(*m)) {
            milestones_at = Some(i as u32);
        }
    }
    Ok(RunReport {
        seed,
        transfer: agent.transfer,
        results,
        unlock_series: series,
        milestones_at,
        unlocked: state.unlocked.clone(),
        bank_size: bank.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csd::fixtures::wooden_pickaxe_plan;
    use crate::ical_engine::BuiltinPolicy;

    fn goal_cfgs(goals: &[String]) -> Vec<EpisodeConfig> {
        goals.iter().map(EpisodeConfig::goal).collect()
    }

    #[test]
    fn planks_from_scratch() {
        let tree = TechTree::default_tree();
        let mut s = WorldState::new(0);
        let mut bank = MemoryBank::new();
        let r = run_episode(
            &EpisodeConfig::goal("oak_planks"),
            &AgentConfig::default(),
            &mut s,
            &mut bank,
            &tree,
            &BuiltinPolicy::default(),
        )
        .unwrap();
        assert!(r.success);
        assert_eq!(r.source, PlanSource::Planned);
        assert!(r.steps_used <= 3);
        assert_eq!(bank.len(), 1);
    }

    #[test]
    fn stone_pickaxe_is_transferred() {
        let tree = TechTree::default_tree();
        let mut s = WorldState::new(0);
        let mut bank = MemoryBank::new();
        let builder = CsdBuilder::new(&tree, Encoder::default());
        let out = run_and_record(&mut bank, &mut s, &builder, "wooden_pickaxe", &wooden_pickaxe_plan()).unwrap();
        assert!(matches!(out, TrialOutcome::Executed { committed: Some(0), .. }));
        let r = run_episode(
            &EpisodeConfig::goal("stone_pickaxe"),
            &AgentConfig::default(),
            &mut s,
            &mut bank,
            &tree,
            &BuiltinPolicy::default(),
        )
        .unwrap();
        assert!(r.success);
        assert_eq!(r.source, PlanSource::Transferred);
        assert_eq!(r.provenance[0].source_entry_id, 0);
        assert!(s.unlocked.contains("stone_pickaxe"));
    }

    #[test]
    fn unreachable_goal_fails_and_logs() {
        let tree = TechTree::default_tree();
        let mut s = WorldState::new(0);
        let mut bank = MemoryBank::new();
        let cfg = EpisodeConfig::goal("dragon_egg");
        let r = run_episode(&cfg, &AgentConfig::default(), &mut s, &mut bank, &tree, &BuiltinPolicy::default()).unwrap();
        assert!(!r.success);
        assert_eq!(bank.failures().len(), 1);
        assert!(bank.is_empty());
    }

    #[test]
    fn budgets_must_be_positive() {
        let tree = TechTree::default_tree();
        let mut cfg = EpisodeConfig::goal("stick");
        cfg.action_budget = 0;
        let r = run_episode(
            &cfg,
            &AgentConfig::default(),
            &mut WorldState::new(0),
            &mut MemoryBank::new(),
            &tree,
            &BuiltinPolicy::default(),
        );
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn plan_over_budget_fails() {
        let tree = TechTree::default_tree();
        let mut cfg = EpisodeConfig::goal("wooden_pickaxe");
        cfg.action_budget = 2;
        let mut bank = MemoryBank::new();
        let r = run_episode(&cfg, &AgentConfig::default(), &mut WorldState::new(0), &mut bank, &tree, &BuiltinPolicy::default())
            .unwrap();
        assert!(!r.success);
        assert_eq!(bank.failures().records[0].reason, "action_budget");
    }

    #[test]
    fn curriculum_is_a_seeded_near_sort() {
        let tree = TechTree::default_tree();
        let a = default_curriculum(&tree, 1, 30);
        assert_eq!(a, default_curriculum(&tree, 1, 30));
        assert_eq!(a.len(), 30);
        let n = tree.goal_items().len();
        let distinct: BTreeSet<&String> = a[..n].iter().collect();
        assert_eq!(distinct.len(), n);
        assert_eq!(a[n], a[0]);
        assert!(default_curriculum(&tree, 1, 0).is_empty());
    }

    #[test]
    fn empty_curriculum_gives_empty_report() {
        let tree = TechTree::default_tree();
        let r = run_curriculum(&[], 0, &tree, &AgentConfig::default(), &BuiltinPolicy::default()).unwrap();
        assert!(r.results.is_empty() && r.unlock_series.is_empty());
    }

    #[test]
    fn run_invariants() {
        let tree = TechTree::default_tree();
        let goals = default_curriculum(&tree, 3, 30);
        let policy = BuiltinPolicy::default();
        for transfer in [true, false] {
            let agent = AgentConfig {
                transfer,
                ..AgentConfig::default()
            };
            let mut state = WorldState::new(3);
            let mut bank = MemoryBank::new();
            let cfgs = goal_cfgs(&goals);
            let mut before = 0;
            for (i, cfg) in cfgs.iter().enumerate() {
                state.episode = i as u32;
                let ids: BTreeSet<u64> = bank.entries().map(|e| e.entry_id).collect();
                let len = bank.len();
                let r = run_episode(cfg, &agent, &mut state, &mut bank, &tree, &policy).unwrap();
                if r.success {
                    assert!(state.unlocked.contains(r.goal.as_deref().unwrap()));
                } else {
                    assert!(bank.len() <= len);
                }
                if r.source == PlanSource::Transferred {
                    assert!(r.provenance.iter().all(|p| ids.contains(&p.source_entry_id)));
                }
                assert!(state.unlocked_count() >= before);
                before = state.unlocked_count();
            }
            let report = run_curriculum(&cfgs, 3, &tree, &agent, &policy).unwrap();
            assert!(report.unlock_series.windows(2).all(|w| w[0].unlocked_count <= w[1].unlocked_count));
            assert_eq!(report, run_curriculum(&cfgs, 3, &tree, &agent, &policy).unwrap());
        }
    }
}
