//! Symbolic plan checking by precondition chaining.
//!
//! Runs the plan over an abstract copy of inventory and stations with no
//! resource limits. Every violation is collected; a failed step is still
//! applied as far as possible so later steps are judged on their own.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::world_sim::{Action, RecipeKind, TechTree, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Assertion {
    RequiresStation { station: String },
    RequiresItem { item: String, count: u32 },
    Produces { item: String, count: u32 },
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assertion::RequiresStation { station } => write!(f, "requires_station({station})"),
            Assertion::RequiresItem { item, count } => write!(f, "requires_item({item}, {count})"),
            Assertion::Produces { item, count } => write!(f, "produces({item}, {count})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonCode {
    MissingTool,
    MissingInputs,
    MissingStation,
    MissingFuel,
    UnknownActionTarget,
    UnknownRecipe,
    UnknownItem,
    InvalidAssertion,
    AssertionMismatch,
}

impl ReasonCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReasonCode::MissingTool => "missing_tool",
            ReasonCode::MissingInputs => "missing_inputs",
            ReasonCode::MissingStation => "missing_station",
            ReasonCode::MissingFuel => "missing_fuel",
            ReasonCode::UnknownActionTarget => "unknown_action_target",
            ReasonCode::UnknownRecipe => "unknown_recipe",
            ReasonCode::UnknownItem => "unknown_item",
            ReasonCode::InvalidAssertion => "invalid_assertion",
            ReasonCode::AssertionMismatch => "assertion_mismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    Step(usize),
    Assertion(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub at: Site,
    pub reason: ReasonCode,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

struct Abstract<'a> {
    tree: &'a TechTree,
    inv: BTreeMap<String, u32>,
    placed: BTreeSet<String>,
    consumed: BTreeMap<String, u32>,
    used_stations: BTreeSet<String>,
    tools_used: BTreeSet<String>,
    violations: Vec<Violation>,
}

impl<'a> Abstract<'a> {
    fn count(&self, item: &str) -> u32 {
        self.inv.get(item).copied().unwrap_or(0)
    }

    fn flag(&mut self, i: usize, reason: ReasonCode, message: String) {
        self.violations.push(Violation {
            at: Site::Step(i),
            reason,
            message,
        });
    }

    fn take(&mut self, item: &str, n: u32) {
        let left = self.count(item).saturating_sub(n);
        if left == 0 {
            self.inv.remove(item);
        } else {
            self.inv.insert(item.to_string(), left);
        }
        *self.consumed.entry(item.to_string()).or_insert(0) += n;
    }

    fn give(&mut self, item: &str, n: u32) {
        *self.inv.entry(item.to_string()).or_insert(0) += n;
    }

    fn best_tool(&self, tier: u8) -> Option<String> {
        self.inv
            .keys()
            .filter(|k| self.tree.tool_tier(k).is_some_and(|t| t >= tier))
            .min_by_key(|k| self.tree.tool_tier(k))
            .cloned()
    }

    fn step(&mut self, i: usize, action: &Action) {
        use ReasonCode::*;
        let tree = self.tree;
        match action {
            Action::Gather { item, count } => {
                if !tree.contains(item) {
                    return self.flag(i, UnknownItem, format!("`{item}` is not in the catalog"));
                }
                let Some(rule) = tree.gather_rule(item) else {
                    return self.flag(i, UnknownActionTarget, format!("`{item}` cannot be gathered"));
                };
                if *count == 0 {
                    return self.flag(i, UnknownActionTarget, "gather count is zero".into());
                }
                if rule.tier > 0 {
                    match self.best_tool(rule.tier) {
                        Some(tool) => {
                            self.tools_used.insert(tool);
                        }
                        None => self.flag(i, MissingTool, format!("`{item}` needs a tier-{} pickaxe", rule.tier)),
                    }
                }
                self.give(item, *count);
            }
            Action::Craft { recipe } | Action::Smelt { recipe } => {
                let Some(r) = tree.recipe(recipe) else {
                    return self.flag(i, UnknownRecipe, format!("no recipe `{recipe}`"));
                };
                let want = match action {
                    Action::Craft { .. } => RecipeKind::Craft,
                    _ => RecipeKind::Smelt,
                };
                if r.kind != want {
                    return self.flag(i, UnknownActionTarget, format!("`{recipe}` is not a {} recipe", action.kind()));
                }
                let missing: Vec<String> = r
                    .inputs
                    .iter()
                    .filter(|(it, n)| self.count(it) < **n)
                    .map(|(it, n)| format!("{it} {}/{n}", self.count(it)))
                    .collect();
                if !missing.is_empty() {
                    self.flag(i, MissingInputs, format!("`{recipe}` lacks {}", missing.join(", ")));
                }
                if let Some(st) = &r.station {
                    self.used_stations.insert(st.clone());
                    if !self.placed.contains(st) {
                        self.flag(i, MissingStation, format!("`{recipe}` needs a placed {st}"));
                    }
                }
                let fuel = if want == RecipeKind::Smelt {
                    let f = tree
                        .fuels()
                        .find(|f| self.count(&f.name) > r.inputs.get(&f.name).copied().unwrap_or(0))
                        .map(|f| f.name.clone());
                    if f.is_none() {
                        self.flag(i, MissingFuel, format!("`{recipe}` has no fuel"));
                    }
                    f
                } else {
                    None
                };
                for (it, n) in &r.inputs {
                    self.take(it, *n);
                }
                if let Some(f) = fuel {
                    self.take(&f, 1);
                }
                self.give(&r.output, r.count);
            }
            Action::Place { station } => {
                if !tree.contains(station) {
                    return self.flag(i, UnknownItem, format!("`{station}` is not in the catalog"));
                }
                if !tree.is_station(station) {
                    return self.flag(i, UnknownActionTarget, format!("`{station}` is not a station"));
                }
                self.used_stations.insert(station.clone());
                if self.count(station) == 0 {
                    self.flag(i, MissingInputs, format!("no {station} to place"));
                }
                self.take(station, 1);
                self.placed.insert(station.clone());
            }
        }
    }

    fn check_assertion(&mut self, i: usize, a: &Assertion) {
        use ReasonCode::*;
        let tree = self.tree;
        let mut fail = |reason, message: String| {
            self.violations.push(Violation {
                at: Site::Assertion(i),
                reason,
                message,
            })
        };
        match a {
            Assertion::Produces { count: 0, .. } | Assertion::RequiresItem { count: 0, .. } => {
                fail(InvalidAssertion, format!("{a}: count must be at least 1"));
            }
            Assertion::Produces { item, .. }
            | Assertion::RequiresItem { item, .. }
            | Assertion::RequiresStation { station: item }
                if !tree.contains(item) =>
            {
                fail(UnknownItem, format!("{a}: `{item}` is not in the catalog"));
            }
            Assertion::Produces { item, count } => {
                let have = self.inv.get(item).copied().unwrap_or(0);
                if have < *count {
                    fail(AssertionMismatch, format!("{a}: plan ends with {have}"));
                }
            }
            Assertion::RequiresStation { station } => {
                if !self.used_stations.contains(station) {
                    fail(AssertionMismatch, format!("{a}: plan never uses {station}"));
                }
            }
            Assertion::RequiresItem { item, count } => {
                let used = self.consumed.get(item).copied().unwrap_or(0);
                if used < *count && !self.tools_used.contains(item) {
                    fail(AssertionMismatch, format!("{a}: plan consumes {used}"));
                }
            }
        }
    }
}

/// Check `plan` and `asserts` against `state` without mutating it.
pub fn verify(plan: &[Action], asserts: &[Assertion], state: &WorldState, tree: &TechTree) -> VerificationReport {
    let mut abs = Abstract {
        tree,
        inv: state.inventory.clone(),
        placed: state.placed_stations.clone(),
        consumed: BTreeMap::new(),
        used_stations: BTreeSet::new(),
        tools_used: BTreeSet::new(),
        violations: Vec::new(),
    };
    for (i, a) in plan.iter().enumerate() {
        abs.step(i, a);
    }
    for (i, a) in asserts.iter().enumerate() {
        abs.check_assertion(i, a);
    }
    let verdict = if abs.violations.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    VerificationReport {
        verdict,
        violations: abs.violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csd::fixtures::{stone_pickaxe_plan, wooden_pickaxe_plan};
    use crate::world_sim::execute;

    fn produces(item: &str) -> Assertion {
        Assertion::Produces {
            item: item.into(),
            count: 1,
        }
    }

    /// Stone pickaxe from scratch.
    fn full_stone_plan() -> Vec<Action> {
        let mut p = wooden_pickaxe_plan();
        p.extend(stone_pickaxe_plan());
        p.insert(8, Action::gather("oak_log", 1));
        p.insert(9, Action::craft("oak_planks"));
        p.insert(10, Action::gather("oak_log", 1));
        p.insert(11, Action::craft("oak_planks"));
        p
    }

    #[test]
    fn missing_place_is_caught_at_final_craft() {
        let tree = TechTree::default_tree();
        let mut plan = wooden_pickaxe_plan();
        plan.remove(6);
        let r = verify(&plan, &[produces("wooden_pickaxe")], &WorldState::new(0), &tree);
        assert!(!r.passed());
        assert!(r
            .violations
            .iter()
            .any(|v| v.at == Site::Step(6) && v.reason == ReasonCode::MissingStation));
    }

    #[test]
    fn empty_plan_passes() {
        let tree = TechTree::default_tree();
        assert!(verify(&[], &[], &WorldState::new(0), &tree).passed());
    }

    #[test]
    fn produces_must_be_entailed() {
        let tree = TechTree::default_tree();
        let plan = full_stone_plan();
        let start = WorldState::new(0);
        assert!(verify(&plan, &[produces("stone_pickaxe")], &start, &tree).passed());
        let r = verify(&plan, &[produces("iron_pickaxe")], &start, &tree);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].reason, ReasonCode::AssertionMismatch);
        assert_eq!(r.violations[0].at, Site::Assertion(0));
        // oracle: the simulator agrees on the final inventory
        let mut s = WorldState::new(0);
        assert!(execute(&plan, &mut s, &tree, "stone_pickaxe").success);
        assert_eq!(s.count("iron_pickaxe"), 0);
    }

    #[test]
    fn requires_assertions() {
        let tree = TechTree::default_tree();
        let plan = full_stone_plan();
        let start = WorldState::new(0);
        let ok = [
            Assertion::RequiresStation {
                station: "crafting_table".into(),
            },
            Assertion::RequiresItem {
                item: "stone".into(),
                count: 3,
            },
            Assertion::RequiresItem {
                item: "wooden_pickaxe".into(),
                count: 1,
            },
        ];
        assert!(verify(&plan, &ok, &start, &tree).passed());
        let bad = [
            Assertion::RequiresStation {
                station: "furnace".into(),
            },
            Assertion::RequiresItem {
                item: "stone".into(),
                count: 4,
            },
            Assertion::Produces {
                item: "stick".into(),
                count: 0,
            },
        ];
        let r = verify(&plan, &bad, &start, &tree);
        let reasons: Vec<ReasonCode> = r.violations.iter().map(|v| v.reason).collect();
        assert_eq!(
            reasons,
            [ReasonCode::AssertionMismatch, ReasonCode::AssertionMismatch, ReasonCode::InvalidAssertion]
        );
    }

    #[test]
    fn collects_every_violation() {
        let tree = TechTree::default_tree();
        let plan = [
            Action::gather("stone", 1),
            Action::craft("nope"),
            Action::smelt("stick"),
            Action::place("stick"),
            Action::gather("ghost", 1),
        ];
        let r = verify(&plan, &[], &WorldState::new(0), &tree);
        let reasons: Vec<ReasonCode> = r.violations.iter().map(|v| v.reason).collect();
        assert_eq!(
            reasons,
            [
                ReasonCode::MissingTool,
                ReasonCode::UnknownRecipe,
                ReasonCode::UnknownActionTarget,
                ReasonCode::UnknownActionTarget,
                ReasonCode::UnknownItem
            ]
        );
    }

    #[test]
    fn smelting_checks_fuel_and_station() {
        let tree = TechTree::default_tree();
        let mut s = WorldState::new(0);
        s.inventory.insert("iron_ore".into(), 1);
        let r = verify(&[Action::smelt("iron_ingot")], &[], &s, &tree);
        let reasons: Vec<ReasonCode> = r.violations.iter().map(|v| v.reason).collect();
        assert_eq!(reasons, [ReasonCode::MissingStation, ReasonCode::MissingFuel]);
    }

    #[test]
    fn state_is_not_mutated() {
        let tree = TechTree::default_tree();
        let s = WorldState::new(0);
        let before = s.clone();
        verify(&wooden_pickaxe_plan(), &[], &s, &tree);
        assert_eq!(s, before);
    }
}
