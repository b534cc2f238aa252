use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tree::{RecipeKind, TechTree};
use crate::error::{Error, Result};

/// Closed action alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Action {
    Gather { item: String, count: u32 },
    Craft { recipe: String },
    Smelt { recipe: String },
    Place { station: String },
}

impl Action {
    pub fn gather(item: impl Into<String>, count: u32) -> Self {
        Action::Gather {
            item: item.into(),
            count,
        }
    }

    pub fn craft(recipe: impl Into<String>) -> Self {
        Action::Craft {
            recipe: recipe.into(),
        }
    }

    pub fn smelt(recipe: impl Into<String>) -> Self {
        Action::Smelt {
            recipe: recipe.into(),
        }
    }

    pub fn place(station: impl Into<String>) -> Self {
        Action::Place {
            station: station.into(),
        }
    }

    /// Lowercase action type, as used in procedural chains.
    pub fn kind(&self) -> &'static str {
        match self {
            Action::Gather { .. } => "gather",
            Action::Craft { .. } => "craft",
            Action::Smelt { .. } => "smelt",
            Action::Place { .. } => "place",
        }
    }

    /// The item or recipe the action names.
    pub fn target(&self) -> &str {
        match self {
            Action::Gather { item, .. } => item,
            Action::Craft { recipe } | Action::Smelt { recipe } => recipe,
            Action::Place { station } => station,
        }
    }
}

/// Line grammar: `GATHER <item> <n> | CRAFT <recipe> | SMELT <recipe> | PLACE <station>`.
impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Gather { item, count } => write!(f, "GATHER {item} {count}"),
            Action::Craft { recipe } => write!(f, "CRAFT {recipe}"),
            Action::Smelt { recipe } => write!(f, "SMELT {recipe}"),
            Action::Place { station } => write!(f, "PLACE {station}"),
        }
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let bad = || Error::InvalidInput(format!("malformed action `{s}`"));
        match parts.as_slice() {
            ["GATHER", item, n] => {
                let count: u32 = n.parse().map_err(|_| bad())?;
                if count == 0 {
                    return Err(bad());
                }
                Ok(Action::gather(*item, count))
            }
            ["CRAFT", r] => Ok(Action::craft(*r)),
            ["SMELT", r] => Ok(Action::smelt(*r)),
            ["PLACE", st] => Ok(Action::place(*st)),
            _ => Err(bad()),
        }
    }
}

/// Parse a plan written one action per line; blank lines and `#` comments are skipped.
pub fn parse_plan(text: &str) -> Result<Vec<Action>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    MissingTool,
    MissingInputs,
    MissingStation,
    MissingFuel,
    UnknownActionTarget,
    /// A finite deposit ran out.
    Depleted,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureReason::MissingTool => "missing_tool",
            FailureReason::MissingInputs => "missing_inputs",
            FailureReason::MissingStation => "missing_station",
            FailureReason::MissingFuel => "missing_fuel",
            FailureReason::UnknownActionTarget => "unknown_action_target",
            FailureReason::Depleted => "depleted",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Failed(FailureReason),
}

impl Outcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, Outcome::Ok)
    }
}

/// Changes made by one successful step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDelta {
    pub inventory: BTreeMap<String, i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placed: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unlocked: Vec<String>,
}

impl StateDelta {
    fn add(&mut self, item: &str, n: i64) {
        *self.inventory.entry(item.to_string()).or_insert(0) += n;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub action: Action,
    pub outcome: Outcome,
    pub delta: StateDelta,
}

/// Execution record of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub success: bool,
    pub steps_used: usize,
}

impl Trace {
    pub fn first_failure(&self) -> Option<(usize, FailureReason)> {
        self.steps.iter().enumerate().find_map(|(i, s)| match s.outcome {
            Outcome::Failed(r) => Some((i, r)),
            Outcome::Ok => None,
        })
    }

    pub fn executed_actions(&self) -> Vec<Action> {
        self.steps
            .iter()
            .filter(|s| s.outcome.is_ok())
            .map(|s| s.action.clone())
            .collect()
    }
}

/// Environment state of one world.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WorldState {
    pub inventory: BTreeMap<String, u32>,
    pub placed_stations: BTreeSet<String>,
    /// Items ever crafted or smelted. Gathered raw resources are not counted.
    pub unlocked: BTreeSet<String>,
    pub episode: u32,
    pub episode_step: u32,
    pub total_steps: u64,
    pub rng_seed: u64,
    /// Finite resource deposits; resources absent here are unbounded.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub deposits: BTreeMap<String, u32>,
}

impl WorldState {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..Self::default()
        }
    }

    /// Every mining tool held and every station placed; raw resources unbounded.
    pub fn infinite_resources(tree: &TechTree) -> Self {
        let mut s = Self::new(0);
        for it in tree.items() {
            if it.tool_tier.is_some() {
                s.inventory.insert(it.name.clone(), 1);
            }
            if it.station {
                s.placed_stations.insert(it.name.clone());
            }
        }
        s
    }

    pub fn count(&self, item: &str) -> u32 {
        self.inventory.get(item).copied().unwrap_or(0)
    }

    pub fn unlocked_count(&self) -> usize {
        self.unlocked.len()
    }

    /// Best mining tier among held tools.
    pub fn best_tier(&self, tree: &TechTree) -> u8 {
        self.inventory
            .iter()
            .filter(|(_, n)| **n > 0)
            .filter_map(|(name, _)| tree.tool_tier(name))
            .max()
            .unwrap_or(0)
    }

    /// Functional single step.
    pub fn step(&self, action: &Action, tree: &TechTree) -> (WorldState, Outcome) {
        let mut next = self.clone();
        let (outcome, _) = next.apply(action, tree);
        (next, outcome)
    }

    /// Apply one action in place. Failed actions leave the state untouched
    /// apart from the step counters.
    pub fn apply(&mut self, action: &Action, tree: &TechTree) -> (Outcome, StateDelta) {
        self.episode_step += 1;
        self.total_steps += 1;
        match self.check(action, tree) {
            Err(reason) => (Outcome::Failed(reason), StateDelta::default()),
            Ok(effect) => {
                let delta = self.commit(effect);
                (Outcome::Ok, delta)
            }
        }
    }

    fn check(&self, action: &Action, tree: &TechTree) -> std::result::Result<Effect, FailureReason> {
        use FailureReason::*;
        match action {
            Action::Gather { item, count } => {
                let rule = tree.gather_rule(item).ok_or(UnknownActionTarget)?;
                if *count == 0 {
                    return Err(UnknownActionTarget);
                }
                if self.best_tier(tree) < rule.tier {
                    return Err(MissingTool);
                }
                if let Some(left) = self.deposits.get(item) {
                    if left < count {
                        return Err(Depleted);
                    }
                }
                Ok(Effect {
                    consume: vec![],
                    produce: vec![(item.clone(), *count)],
                    deplete: Some((item.clone(), *count)),
                    place: None,
                    unlock: None,
                })
            }
            Action::Craft { recipe } | Action::Smelt { recipe } => {
                let want = if matches!(action, Action::Craft { .. }) {
                    RecipeKind::Craft
                } else {
                    RecipeKind::Smelt
                };
                let r = tree.recipe(recipe).filter(|r| r.kind == want).ok_or(UnknownActionTarget)?;
                if r.inputs.iter().any(|(it, n)| self.count(it) < *n) {
                    return Err(MissingInputs);
                }
                if let Some(st) = &r.station {
                    if !self.placed_stations.contains(st) {
                        return Err(MissingStation);
                    }
                }
                let mut consume: Vec<(String, u32)> =
                    r.inputs.iter().map(|(k, v)| (k.clone(), *v)).collect();
                if want == RecipeKind::Smelt {
                    let fuel = tree
                        .fuels()
                        .find(|f| self.count(&f.name) > r.inputs.get(&f.name).copied().unwrap_or(0))
                        .ok_or(MissingFuel)?;
                    consume.push((fuel.name.clone(), 1));
                }
                Ok(Effect {
                    consume,
                    produce: vec![(r.output.clone(), r.count)],
                    deplete: None,
                    place: None,
                    unlock: Some(r.output.clone()),
                })
            }
            Action::Place { station } => {
                if !tree.is_station(station) {
                    return Err(UnknownActionTarget);
                }
                if self.count(station) == 0 {
                    return Err(MissingInputs);
                }
                Ok(Effect {
                    consume: vec![(station.clone(), 1)],
                    produce: vec![],
                    deplete: None,
                    place: Some(station.clone()),
                    unlock: None,
                })
            }
        }
    }

    fn commit(&mut self, e: Effect) -> StateDelta {
        let mut delta = StateDelta::default();
        for (item, n) in e.consume {
            let slot = self.inventory.get_mut(&item).expect("checked availability");
            *slot -= n;
            if *slot == 0 {
                self.inventory.remove(&item);
            }
            delta.add(&item, -(n as i64));
        }
        for (item, n) in e.produce {
            *self.inventory.entry(item.clone()).or_insert(0) += n;
            delta.add(&item, n as i64);
        }
        if let Some((item, n)) = e.deplete {
            if let Some(left) = self.deposits.get_mut(&item) {
                *left -= n;
            }
        }
        if let Some(st) = e.place {
            self.placed_stations.insert(st.clone());
            delta.placed = Some(st);
        }
        if let Some(item) = e.unlock {
            if self.unlocked.insert(item.clone()) {
                delta.unlocked.push(item);
            }
        }
        delta.inventory.retain(|_, v| *v != 0);
        delta
    }
}

struct Effect {
    consume: Vec<(String, u32)>,
    produce: Vec<(String, u32)>,
    deplete: Option<(String, u32)>,
    place: Option<String>,
    unlock: Option<String>,
}

/// Fold `step` over a plan, stopping at the first failure.
/// Succeeds iff every step succeeds and the goal is held at the end.
pub fn execute(plan: &[Action], state: &mut WorldState, tree: &TechTree, goal: &str) -> Trace {
    let mut steps = Vec::with_capacity(plan.len());
    let mut failed = false;
    for action in plan {
        let (outcome, delta) = state.apply(action, tree);
        steps.push(TraceStep {
            action: action.clone(),
            outcome,
            delta,
        });
        if !outcome.is_ok() {
            failed = true;
            break;
        }
    }
    let steps_used = steps.len();
    Trace {
        steps,
        success: !failed && state.count(goal) >= 1,
        steps_used,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn wooden_pickaxe_plan() -> Vec<Action> {
        vec![
            Action::gather("oak_log", 3),
            Action::craft("oak_planks"),
            Action::craft("oak_planks"),
            Action::craft("oak_planks"),
            Action::craft("stick"),
            Action::craft("crafting_table"),
            Action::place("crafting_table"),
            Action::craft("wooden_pickaxe"),
        ]
    }

    #[test]
    fn craft_without_table_is_missing_station() {
        let tree = TechTree::default_tree();
        let mut s = WorldState::new(1);
        s.inventory.insert("oak_planks".into(), 3);
        s.inventory.insert("stick".into(), 2);
        let (_, out) = s.step(&Action::craft("wooden_pickaxe"), &tree);
        assert_eq!(out, Outcome::Failed(FailureReason::MissingStation));
    }

    #[test]
    fn logs_need_no_tool() {
        let tree = TechTree::default_tree();
        let (s, out) = WorldState::new(1).step(&Action::gather("oak_log", 1), &tree);
        assert!(out.is_ok());
        assert_eq!(s.count("oak_log"), 1);
    }

    #[test]
    fn craft_on_empty_inventory() {
        let tree = TechTree::default_tree();
        let (s, out) = WorldState::new(1).step(&Action::craft("oak_planks"), &tree);
        assert_eq!(out, Outcome::Failed(FailureReason::MissingInputs));
        assert!(s.inventory.is_empty());
    }

    #[test]
    fn stone_needs_a_pickaxe() {
        let tree = TechTree::default_tree();
        let (_, out) = WorldState::new(1).step(&Action::gather("stone", 1), &tree);
        assert_eq!(out, Outcome::Failed(FailureReason::MissingTool));
    }

    #[test]
    fn smelting_needs_fuel_and_furnace() {
        let tree = TechTree::default_tree();
        let mut s = WorldState::new(1);
        s.inventory.insert("iron_ore".into(), 1);
        let (_, out) = s.step(&Action::smelt("iron_ingot"), &tree);
        assert_eq!(out, Outcome::Failed(FailureReason::MissingStation));
        s.placed_stations.insert("furnace".into());
        let (_, out) = s.step(&Action::smelt("iron_ingot"), &tree);
        assert_eq!(out, Outcome::Failed(FailureReason::MissingFuel));
        s.inventory.insert("coal".into(), 1);
        let (next, out) = s.step(&Action::smelt("iron_ingot"), &tree);
        assert!(out.is_ok());
        assert_eq!(next.count("iron_ingot"), 1);
        assert_eq!(next.count("coal"), 0);
        assert_eq!(next.count("iron_ore"), 0);
    }

    #[test]
    fn crafting_the_wrong_kind_is_unknown_target() {
        let tree = TechTree::default_tree();
        let (_, out) = WorldState::new(1).step(&Action::craft("iron_ingot"), &tree);
        assert_eq!(out, Outcome::Failed(FailureReason::UnknownActionTarget));
        let (_, out) = WorldState::new(1).step(&Action::place("stick"), &tree);
        assert_eq!(out, Outcome::Failed(FailureReason::UnknownActionTarget));
    }

    #[test]
    fn finite_deposits_deplete() {
        let tree = TechTree::default_tree();
        let mut s = WorldState::new(1);
        s.deposits.insert("oak_log".into(), 2);
        let (s, out) = s.step(&Action::gather("oak_log", 2), &tree);
        assert!(out.is_ok());
        let (_, out) = s.step(&Action::gather("oak_log", 1), &tree);
        assert_eq!(out, Outcome::Failed(FailureReason::Depleted));
    }

    #[test]
    fn wooden_pickaxe_plan_unlocks_four_items() {
        let tree = TechTree::default_tree();
        let mut s = WorldState::new(7);
        assert_eq!(s.unlocked_count(), 0);
        let trace = execute(&wooden_pickaxe_plan(), &mut s, &tree, "wooden_pickaxe");
        assert!(trace.success);
        let expect: BTreeSet<String> = ["oak_planks", "stick", "crafting_table", "wooden_pickaxe"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(s.unlocked, expect);
        assert_eq!(s.unlocked_count(), 4);
    }

    #[test]
    fn dropping_the_place_step_fails_at_final_craft() {
        let tree = TechTree::default_tree();
        let mut plan = wooden_pickaxe_plan();
        plan.remove(6);
        let mut s = WorldState::new(7);
        let trace = execute(&plan, &mut s, &tree, "wooden_pickaxe");
        assert!(!trace.success);
        assert_eq!(trace.first_failure(), Some((6, FailureReason::MissingStation)));
    }

    #[test]
    fn empty_plan_without_goal_fails() {
        let tree = TechTree::default_tree();
        let trace = execute(&[], &mut WorldState::new(0), &tree, "stick");
        assert!(!trace.success);
        assert_eq!(trace.steps_used, 0);
    }

    #[test]
    fn action_grammar_round_trips() {
        for a in wooden_pickaxe_plan() {
            assert_eq!(a.to_string().parse::<Action>().unwrap(), a);
        }
        assert!("GATHER oak_log".parse::<Action>().is_err());
        assert!("GATHER oak_log 0".parse::<Action>().is_err());
        assert!("DANCE".parse::<Action>().is_err());
    }

    #[test]
    fn step_is_deterministic() {
        let tree = TechTree::default_tree();
        let mut a = WorldState::new(3);
        let mut b = WorldState::new(3);
        let ta = execute(&wooden_pickaxe_plan(), &mut a, &tree, "wooden_pickaxe");
        let tb = execute(&wooden_pickaxe_plan(), &mut b, &tree, "wooden_pickaxe");
        assert_eq!(ta, tb);
        assert_eq!(a, b);
    }
}
