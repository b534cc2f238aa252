//! Depth-limited backward chaining over the recipe graph.
//!
//! Used as the cold-start planner and for acquiring substituted inputs. Each
//! recipe expansion costs one level; gathering costs none, and a tool needed
//! for gathering is planned at the same level as the resource. Items already
//! held or stations already placed are free.

use std::collections::BTreeMap;

use crate::world_sim::{Action, Recipe, RecipeKind, TechTree, WorldState};

/// Default expansion depth.
pub const DEFAULT_DEPTH: u32 = 3;

/// Upper bound used when searching for the minimal depth of an item.
const MAX_DEPTH: u32 = 16;

#[derive(Debug, Clone, Copy)]
pub struct Planner<'a> {
    tree: &'a TechTree,
    max_depth: u32,
}

impl<'a> Planner<'a> {
    pub fn new(tree: &'a TechTree, max_depth: u32) -> Self {
        Self { tree, max_depth }
    }

    pub fn max_depth(&self) -> u32 {
        self.max_depth
    }

    /// Plan to hold `qty` of `goal` starting from `state`.
    pub fn plan(&self, goal: &str, qty: u32, state: &WorldState) -> Option<Vec<Action>> {
        let mut b = PlanBuilder::new(self.tree, state.clone());
        b.obtain(goal, qty, self.max_depth).then_some(b.actions)
    }
}

/// Incremental plan construction over a simulated state.
#[derive(Debug, Clone)]
pub struct PlanBuilder<'a> {
    tree: &'a TechTree,
    pub sim: WorldState,
    reserved: BTreeMap<String, u32>,
    pub actions: Vec<Action>,
}

impl<'a> PlanBuilder<'a> {
    pub fn new(tree: &'a TechTree, sim: WorldState) -> Self {
        Self {
            tree,
            sim,
            reserved: BTreeMap::new(),
            actions: Vec::new(),
        }
    }

    /// Apply an action to the simulated state and record it. Returns false if it fails.
    pub fn push(&mut self, action: Action) -> bool {
        let (outcome, _) = self.sim.apply(&action, self.tree);
        self.actions.push(action);
        outcome.is_ok()
    }

    fn available(&self, item: &str) -> u32 {
        self.sim
            .count(item)
            .saturating_sub(self.reserved.get(item).copied().unwrap_or(0))
    }

    fn reserve(&mut self, item: &str, n: u32) {
        *self.reserved.entry(item.to_string()).or_insert(0) += n;
    }

    fn release(&mut self, item: &str, n: u32) {
        if let Some(r) = self.reserved.get_mut(item) {
            *r = r.saturating_sub(n);
            if *r == 0 {
                self.reserved.remove(item);
            }
        }
    }

    /// Make `qty` of `item` available and reserve it for the caller.
    /// Leaves the builder in an unspecified state on failure.
    pub fn obtain(&mut self, item: &str, qty: u32, depth: u32) -> bool {
        let have = self.available(item);
        if have >= qty {
            self.reserve(item, qty);
            return true;
        }
        let need = qty - have;
        let tree = self.tree;
        if let Some(rule) = tree.gather_rule(item) {
            if self.sim.best_tier(tree) < rule.tier {
                let Some(tool) = tree.minimal_tool(rule.tier) else {
                    return false;
                };
                if !self.obtain(&tool.name, 1, depth) {
                    return false;
                }
                self.release(&tool.name, 1);
            }
            if !self.push(Action::gather(item, need)) {
                return false;
            }
            self.reserve(item, qty);
            return true;
        }
        let Some(recipe) = tree.primary_recipe(item) else {
            return false;
        };
        if depth == 0 {
            return false;
        }
        let crafts = need.div_ceil(recipe.count);
        for (input, n) in &recipe.inputs {
            if !self.obtain(input, n * crafts, depth - 1) {
                return false;
            }
        }
        if let Some(st) = &recipe.station {
            if !self.sim.placed_stations.contains(st) {
                if !self.obtain(st, 1, depth - 1) {
                    return false;
                }
                self.release(st, 1);
                if !self.push(Action::place(st.clone())) {
                    return false;
                }
            }
        }
        for _ in 0..crafts {
            let action = match recipe.kind {
                RecipeKind::Craft => Action::craft(recipe.id.clone()),
                RecipeKind::Smelt => {
                    if !self.secure_fuel(&recipe.inputs, depth - 1) {
                        return false;
                    }
                    Action::smelt(recipe.id.clone())
                }
            };
            for (input, n) in &recipe.inputs {
                self.release(input, *n);
            }
            if !self.push(action) {
                return false;
            }
        }
        self.reserve(item, qty);
        true
    }

    /// Make sure a smelt of `recipe` will find fuel, assuming its inputs are held.
    pub fn prepare_fuel(&mut self, recipe: &Recipe, depth: u32) -> bool {
        if recipe.kind != RecipeKind::Smelt {
            return true;
        }
        for (input, n) in &recipe.inputs {
            self.reserve(input, *n);
        }
        let ok = self.secure_fuel(&recipe.inputs, depth);
        for (input, n) in &recipe.inputs {
            self.release(input, *n);
        }
        ok
    }

    /// Ensure the fuel the simulator will burn next is not reserved by anyone else.
    fn secure_fuel(&mut self, inputs: &BTreeMap<String, u32>, depth: u32) -> bool {
        let tree = self.tree;
        let burn = tree
            .fuels()
            .find(|f| self.sim.count(&f.name) > inputs.get(&f.name).copied().unwrap_or(0))
            .or_else(|| tree.fuels().next());
        let Some(fuel) = burn else {
            return false;
        };
        // inputs of the pending smelt are still reserved, so they are never counted as fuel
        let ok = self.obtain(&fuel.name, 1, depth);
        self.release(&fuel.name, 1);
        ok
    }
}

/// Smallest depth at which the planner reaches `item` from `state`, if any.
pub fn height(tree: &TechTree, item: &str, state: &WorldState) -> Option<u32> {
    (0..=MAX_DEPTH).find(|d| Planner::new(tree, *d).plan(item, 1, state).is_some())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world_sim::execute;

    fn fresh_height(item: &str) -> Option<u32> {
        height(&TechTree::default_tree(), item, &WorldState::new(0))
    }

    #[test]
    fn fresh_world_heights() {
        assert_eq!(fresh_height("oak_log"), Some(0));
        assert_eq!(fresh_height("oak_planks"), Some(1));
        assert_eq!(fresh_height("stick"), Some(2));
        assert_eq!(fresh_height("crafting_table"), Some(2));
        assert_eq!(fresh_height("wooden_pickaxe"), Some(3));
        assert_eq!(fresh_height("stone"), Some(3));
        assert_eq!(fresh_height("stone_pickaxe"), Some(4));
        assert_eq!(fresh_height("furnace"), Some(4));
        assert_eq!(fresh_height("iron_ingot"), Some(5));
    }

    #[test]
    fn planks_in_at_most_three_actions() {
        let tree = TechTree::default_tree();
        let plan = Planner::new(&tree, DEFAULT_DEPTH)
            .plan("oak_planks", 1, &WorldState::new(0))
            .unwrap();
        assert!(plan.len() <= 3);
        let mut s = WorldState::new(0);
        assert!(execute(&plan, &mut s, &tree, "oak_planks").success);
    }

    #[test]
    fn held_tools_shorten_the_chain() {
        let tree = TechTree::default_tree();
        let mut s = WorldState::new(0);
        s.inventory.insert("stone_pickaxe".into(), 1);
        s.placed_stations.insert("furnace".into());
        // planks for fuel cost one more level
        assert_eq!(height(&tree, "iron_ingot", &s), Some(2));
        s.inventory.insert("coal".into(), 1);
        assert_eq!(height(&tree, "iron_ingot", &s), Some(1));
    }

    #[test]
    fn every_item_plan_executes() {
        let tree = TechTree::default_tree();
        for it in tree.items() {
            let start = WorldState::new(0);
            let plan = Planner::new(&tree, MAX_DEPTH)
                .plan(&it.name, 1, &start)
                .unwrap_or_else(|| panic!("no plan for {}", it.name));
            let mut s = start.clone();
            let trace = execute(&plan, &mut s, &tree, &it.name);
            assert!(trace.success, "{}: {:?}", it.name, trace.first_failure());
        }
    }

    #[test]
    fn depth_limit_is_respected() {
        let tree = TechTree::default_tree();
        assert!(Planner::new(&tree, 2).plan("wooden_pickaxe", 1, &WorldState::new(0)).is_none());
    }

    #[test]
    fn smelting_does_not_burn_reserved_planks() {
        let tree = TechTree::default_tree();
        let mut s = WorldState::new(0);
        s.inventory.insert("stone_pickaxe".into(), 1);
        s.placed_stations.insert("furnace".into());
        s.placed_stations.insert("crafting_table".into());
        let plan = Planner::new(&tree, MAX_DEPTH).plan("shield", 1, &s).unwrap();
        let mut run = s.clone();
        assert!(execute(&plan, &mut run, &tree, "shield").success);
    }
}
