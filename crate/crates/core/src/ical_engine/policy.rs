//! Rule-based analogical policy.
//!
//! For every source in the context it tries single-input substitutions on the
//! source's final recipe. A substitution X -> Y is licensed by the Functional
//! axis when some function description of Y is close to one of X, or by the
//! Attribute axis when both share a material family. The substituted input
//! multiset must match another recipe, whose output becomes the new goal.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{IclContext, PolicyModel, Provenance, Substitution, TaskProposal};
use crate::csd::{tokenize, Axis, TaskRecord};
use crate::embedding::{cosine, Encoder};
use crate::planner::{PlanBuilder, DEFAULT_DEPTH};
use crate::verifier::Assertion;
use crate::world_sim::{Action, Recipe, RecipeKind, TechTree, WorldState};

pub const DEFAULT_BUDGET: usize = 4;
pub const DEFAULT_FUNCTION_THRESHOLD: f64 = 0.55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LicensingConfig {
    /// Axes allowed to license a substitution.
    pub axes: BTreeSet<Axis>,
    pub function_threshold: f64,
    pub budget: usize,
    /// Planner depth used to acquire substituted inputs and tools.
    pub acquire_depth: u32,
}

impl Default for LicensingConfig {
    fn default() -> Self {
        Self {
            axes: Axis::ALL.into_iter().collect(),
            function_threshold: DEFAULT_FUNCTION_THRESHOLD,
            budget: DEFAULT_BUDGET,
            acquire_depth: DEFAULT_DEPTH,
        }
    }
}

impl LicensingConfig {
    pub fn keep_only(axis: Axis) -> Self {
        Self {
            axes: BTreeSet::from([axis]),
            ..Self::default()
        }
    }

    pub fn remove(axis: Axis) -> Self {
        let mut c = Self::default();
        c.axes.remove(&axis);
        c
    }
}

#[derive(Debug, Clone, Default)]
pub struct BuiltinPolicy {
    pub config: LicensingConfig,
    encoder: Encoder,
}

impl BuiltinPolicy {
    pub fn new(config: LicensingConfig) -> Self {
        Self {
            config,
            encoder: Encoder::default(),
        }
    }

    /// Best licensing axis and score for replacing `x` with `y`, if any.
    pub fn license(&self, x: &str, y: &str, tree: &TechTree) -> Option<(Axis, f64)> {
        let (ix, iy) = (tree.item(x)?, tree.item(y)?);
        let mut best: Option<(Axis, f64)> = None;
        let mut consider = |axis: Axis, score: f64, ok: bool| {
            if ok && self.config.axes.contains(&axis) && best.is_none_or(|(_, s)| score > s + 1e-9) {
                best = Some((axis, score));
            }
        };
        let same_family = ix.family == iy.family;
        consider(Axis::Attribute, if same_family { 1.0 } else { 0.0 }, same_family);
        let f = self.function_similarity(&ix.functions, &iy.functions);
        consider(Axis::Functional, f, f >= self.config.function_threshold);
        best
    }

    fn function_similarity(&self, a: &[String], b: &[String]) -> f64 {
        let mut best: f64 = 0.0;
        for fa in a {
            let ea = self.encoder.encode_text(&tokenize(fa));
            for fb in b {
                let eb = self.encoder.encode_text(&tokenize(fb));
                best = best.max(cosine(&ea, &eb).unwrap_or(0.0));
            }
        }
        best
    }

    /// Items the policy may substitute in: whatever the context mentions, what the
    /// agent holds and what it can gather right now. With a goal, any item.
    fn candidates(&self, ctx: &IclContext, state: &WorldState, tree: &TechTree) -> BTreeSet<String> {
        if ctx.goal.is_some() {
            return tree.items().iter().map(|i| i.name.clone()).collect();
        }
        let mut known: BTreeSet<String> = BTreeSet::new();
        for e in ctx.sources() {
            if let Ok(r) = TaskRecord::from_plan(&e.task_name, &e.action_sequence, tree) {
                known.extend(r.items);
            }
        }
        known.extend(state.inventory.keys().cloned());
        let tier = state.best_tier(tree);
        known.extend(
            tree.gather_rules()
                .iter()
                .filter(|g| g.tier <= tier)
                .map(|g| g.resource.clone()),
        );
        known.retain(|n| tree.contains(n));
        known
    }

    fn acquire_tool(
        &self,
        b: &mut PlanBuilder<'_>,
        tier: u8,
        ctx: &IclContext,
        state: &WorldState,
        tree: &TechTree,
    ) -> bool {
        if b.sim.best_tier(tree) >= tier {
            return true;
        }
        // reuse a remembered tool recipe if the context holds one
        if let Some(e) = ctx.sources().find(|e| tree.tool_tier(&e.task_name).is_some_and(|t| t >= tier)) {
            for a in &e.action_sequence {
                b.push(a.clone());
            }
            return b.sim.best_tier(tree) >= tier;
        }
        let known_tool = tree
            .tools_for_tier(tier)
            .into_iter()
            .find(|t| state.unlocked.contains(&t.name));
        match known_tool {
            Some(t) => b.obtain(&t.name, 1, self.config.acquire_depth),
            None => false,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn remap(
        &self,
        source_plan: &[Action],
        x: &str,
        y: &str,
        target: &Recipe,
        ctx: &IclContext,
        state: &WorldState,
        tree: &TechTree,
    ) -> Option<Vec<Action>> {
        let mut b = PlanBuilder::new(tree, state.clone());
        let q = target.inputs[y];
        match tree.gather_rule(y) {
            Some(rule) => {
                if !self.acquire_tool(&mut b, rule.tier, ctx, state, tree) {
                    return None;
                }
                b.push(Action::gather(y, q));
            }
            None => {
                if !b.obtain(y, q, self.config.acquire_depth) {
                    return None;
                }
            }
        }
        let x_still_used = target.inputs.contains_key(x);
        let (_, body) = source_plan.split_last()?;
        for a in body {
            if matches!(a, Action::Gather { item, .. } if item == x) && !x_still_used {
                continue;
            }
            b.push(a.clone());
        }
        if !b.prepare_fuel(target, self.config.acquire_depth) {
            return None;
        }
        b.push(final_step(target));
        Some(b.actions)
    }

    fn goal_asserts(&self, goal: &str, recipe: Option<&Recipe>, state: &WorldState) -> Vec<Assertion> {
        let mut asserts = vec![Assertion::Produces {
            item: goal.to_string(),
            count: state.count(goal) + 1,
        }];
        if let Some(st) = recipe.and_then(|r| r.station.as_ref()) {
            asserts.push(Assertion::RequiresStation { station: st.clone() });
        }
        asserts
    }
}

fn final_step(r: &Recipe) -> Action {
    match r.kind {
        RecipeKind::Craft => Action::craft(r.id.clone()),
        RecipeKind::Smelt => Action::smelt(r.id.clone()),
    }
}

fn substituted(inputs: &BTreeMap<String, u32>, x: &str, y: &str) -> BTreeMap<String, u32> {
    let mut out = inputs.clone();
    if let Some(n) = out.remove(x) {
        *out.entry(y.to_string()).or_insert(0) += n;
    }
    out
}

struct Ranked {
    rank: usize,
    score: f64,
    proposal: TaskProposal,
}

impl PolicyModel for BuiltinPolicy {
    fn propose(&self, ctx: &IclContext, state: &WorldState, tree: &TechTree) -> Vec<TaskProposal> {
        let candidates = self.candidates(ctx, state, tree);
        let mut ranked: Vec<Ranked> = Vec::new();
        for (rank, source) in ctx.sources().enumerate() {
            if ctx.goal.as_deref() == Some(source.task_name.as_str()) {
                let goal = source.task_name.clone();
                ranked.push(Ranked {
                    rank,
                    score: 1.0,
                    proposal: TaskProposal {
                        asserts: self.goal_asserts(&goal, tree.primary_recipe(&goal), state),
                        goal_item: goal,
                        plan: source.action_sequence.clone(),
                        provenance: Provenance {
                            source_entry_id: source.entry_id,
                            substitutions: vec![],
                        },
                    },
                });
            }
            let Some(Action::Craft { recipe } | Action::Smelt { recipe }) = source.action_sequence.last() else {
                continue;
            };
            let Some(base) = tree.recipe(recipe) else {
                continue;
            };
            for x in base.inputs.keys() {
                for y in &candidates {
                    if y == x {
                        continue;
                    }
                    let Some((axis, score)) = self.license(x, y, tree) else {
                        continue;
                    };
                    let inputs = substituted(&base.inputs, x, y);
                    let Some(target) = tree.recipes().iter().find(|r| {
                        r.id != base.id && r.kind == base.kind && r.station == base.station && r.inputs == inputs
                    }) else {
                        continue;
                    };
                    if target.output == source.task_name {
                        continue;
                    }
                    // with a goal, only that goal; without one, only tasks not yet achieved
                    let wanted = match &ctx.goal {
                        Some(g) => *g == target.output,
                        None => !state.unlocked.contains(&target.output),
                    };
                    if !wanted {
                        continue;
                    }
                    let Some(plan) = self.remap(&source.action_sequence, x, y, target, ctx, state, tree) else {
                        continue;
                    };
                    let mut asserts = self.goal_asserts(&target.output, Some(target), state);
                    asserts.push(Assertion::RequiresItem {
                        item: y.clone(),
                        count: target.inputs[y.as_str()],
                    });
                    ranked.push(Ranked {
                        rank,
                        score,
                        proposal: TaskProposal {
                            goal_item: target.output.clone(),
                            plan,
                            asserts,
                            provenance: Provenance {
                                source_entry_id: source.entry_id,
                                substitutions: vec![Substitution {
                                    from: x.clone(),
                                    to: y.clone(),
                                    axis,
                                    score,
                                }],
                            },
                        },
                    });
                }
            }
        }
        // stable: generation order breaks remaining ties
        ranked.sort_by(|a, b| a.rank.cmp(&b.rank).then(b.score.total_cmp(&a.score)));
        let mut seen = BTreeSet::new();
        ranked
            .into_iter()
            .map(|r| r.proposal)
            .filter(|p| seen.insert((p.goal_item.clone(), p.plan.clone())))
            .take(self.config.budget)
            .collect()
    }
}
