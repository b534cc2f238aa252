//! Position-wise abstraction of clustered plans into templates with typed
//! variables, e.g. `gather {X0}_ore; smelt {X0}_ingot`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory_bank::MemoryBank;
use crate::world_sim::{Action, TechTree};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternStep {
    pub kind: String,
    /// Item or recipe name, possibly containing `{Xn}` placeholders.
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateVar {
    pub name: String,
    /// Shared family or function that types the slot.
    pub kind: String,
    pub values: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternTemplate {
    pub steps: Vec<PatternStep>,
    pub vars: Vec<TemplateVar>,
    pub members: Vec<u64>,
}

impl PatternTemplate {
    /// Bind every variable to `value`.
    pub fn instantiate(&self, value: &str) -> Vec<Action> {
        self.steps
            .iter()
            .map(|s| {
                let mut target = s.target.clone();
                for v in &self.vars {
                    target = target.replace(&format!("{{{}}}", v.name), value);
                }
                match s.kind.as_str() {
                    "gather" => Action::gather(target, s.count.unwrap_or(1)),
                    "craft" => Action::craft(target),
                    "smelt" => Action::smelt(target),
                    _ => Action::place(target),
                }
            })
            .collect()
    }

    /// Values whose instantiation names only items and recipes the tree defines.
    pub fn supported_values(&self, tree: &TechTree) -> BTreeSet<String> {
        let segments: BTreeSet<&str> = tree
            .items()
            .iter()
            .flat_map(|i| i.name.split('_'))
            .collect();
        segments
            .into_iter()
            .filter(|v| {
                self.instantiate(v).iter().all(|a| match a {
                    Action::Gather { item, .. } => tree.gather_rule(item).is_some(),
                    Action::Craft { recipe } | Action::Smelt { recipe } => tree.recipe(recipe).is_some(),
                    Action::Place { station } => tree.is_station(station),
                })
            })
            .map(str::to_string)
            .collect()
    }
}

/// The single `_`-segment at which all names differ, if that is the only difference.
fn differing_segment(names: &[&str]) -> Option<usize> {
    let split: Vec<Vec<&str>> = names.iter().map(|n| n.split('_').collect()).collect();
    let len = split[0].len();
    if split.iter().any(|s| s.len() != len) {
        return None;
    }
    let diff: Vec<usize> = (0..len)
        .filter(|&i| split.iter().any(|s| s[i] != split[0][i]))
        .collect();
    match diff.as_slice() {
        [i] => Some(*i),
        _ => None,
    }
}

/// Family or function shared by every item, preferring the family.
fn shared_type(items: &[&str], tree: &TechTree) -> Option<String> {
    let defs = items.iter().map(|i| tree.item(i)).collect::<Option<Vec<_>>>()?;
    if defs.iter().all(|d| d.family == defs[0].family) {
        return Some(format!("family:{}", defs[0].family));
    }
    defs[0]
        .functions
        .iter()
        .find(|f| defs.iter().all(|d| d.functions.contains(f)))
        .map(|f| format!("function:{f}"))
}

fn item_of<'a>(a: &'a Action, tree: &'a TechTree) -> &'a str {
    match a {
        Action::Craft { recipe } | Action::Smelt { recipe } => tree.recipe(recipe).map_or(recipe.as_str(), |r| &r.output),
        _ => a.target(),
    }
}

pub fn abstract_pattern(cluster: &[u64], bank: &MemoryBank, tree: &TechTree) -> Result<Vec<PatternTemplate>> {
    if cluster.len() < 2 {
        return Err(Error::InvalidInput(format!("pattern needs at least 2 members, got {}", cluster.len())));
    }
    let plans = cluster
        .iter()
        .map(|id| {
            bank.get(*id)
                .map(|e| &e.action_sequence)
                .ok_or_else(|| Error::InvalidInput(format!("entry {id} is not in the bank")))
        })
        .collect::<Result<Vec<_>>>()?;
    let len = plans[0].len();
    if plans.iter().any(|p| p.len() != len) {
        return Ok(vec![]);
    }

    let mut steps = Vec::with_capacity(len);
    // (value vector across members, type) per variable
    let mut vars: Vec<(Vec<String>, String)> = Vec::new();
    for i in 0..len {
        let column: Vec<&Action> = plans.iter().map(|p| &p[i]).collect();
        let first = column[0];
        if column.iter().any(|a| a.kind() != first.kind()) {
            return Ok(vec![]);
        }
        let count = match first {
            Action::Gather { count, .. } => Some(*count),
            _ => None,
        };
        if column
            .iter()
            .any(|a| matches!(a, Action::Gather { count: c, .. } if Some(*c) != count))
        {
            return Ok(vec![]);
        }
        let targets: Vec<&str> = column.iter().map(|a| a.target()).collect();
        let target = if targets.iter().all(|t| *t == targets[0]) {
            targets[0].to_string()
        } else {
            let Some(seg) = differing_segment(&targets) else {
                return Ok(vec![]);
            };
            let items: Vec<&str> = column.iter().map(|a| item_of(a, tree)).collect();
            let Some(kind) = shared_type(&items, tree) else {
                return Ok(vec![]);
            };
            let values: Vec<String> = targets.iter().map(|t| t.split('_').nth(seg).unwrap().to_string()).collect();
            let idx = match vars.iter().position(|(v, _)| *v == values) {
                Some(idx) => idx,
                None => {
                    vars.push((values, kind));
                    vars.len() - 1
                }
            };
            let mut parts: Vec<String> = targets[0].split('_').map(str::to_string).collect();
            parts[seg] = format!("{{X{idx}}}");
            parts.join("_")
        };
        steps.push(PatternStep {
            kind: first.kind().to_string(),
            target,
            count,
        });
    }
    if vars.is_empty() {
        return Ok(vec![]);
    }
    Ok(vec![PatternTemplate {
        steps,
        vars: vars
            .into_iter()
            .enumerate()
            .map(|(i, (values, kind))| TemplateVar {
                name: format!("X{i}"),
                kind,
                values: values.into_iter().collect(),
            })
            .collect(),
        members: cluster.to_vec(),
    }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csd::{build_csd, TaskRecord, Timestamp};
    use crate::verifier::verify;
    use crate::world_sim::WorldState;

    fn bank_of(plans: &[(&str, Vec<Action>)]) -> MemoryBank {
        let tree = TechTree::default_tree();
        let mut bank = MemoryBank::new();
        for (goal, plan) in plans {
            let rec = TaskRecord::from_plan(goal, plan, &tree).unwrap();
            let csd = build_csd(&rec, &WorldState::infinite_resources(&tree), &tree).unwrap();
            bank.commit_success(goal, csd, plan.clone(), Timestamp::default()).unwrap();
        }
        bank
    }

    fn smelt(metal: &str) -> (String, Vec<Action>) {
        (
            format!("{metal}_ingot"),
            vec![
                Action::gather("coal", 1),
                Action::gather(format!("{metal}_ore"), 1),
                Action::smelt(format!("{metal}_ingot")),
            ],
        )
    }

    #[test]
    fn iron_and_gold_share_an_ore_slot() {
        let tree = TechTree::default_tree();
        let (a, b) = (smelt("iron"), smelt("gold"));
        let bank = bank_of(&[(&a.0, a.1), (&b.0, b.1)]);
        let t = abstract_pattern(&[0, 1], &bank, &tree).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].vars.len(), 1);
        assert_eq!(t[0].vars[0].values, BTreeSet::from(["gold".to_string(), "iron".to_string()]));
        assert_eq!(t[0].steps[1].target, "{X0}_ore");
        assert_eq!(t[0].steps[2].target, "{X0}_ingot");
        assert_eq!(t[0].instantiate("iron"), smelt("iron").1);
    }

    #[test]
    fn supported_instantiations_verify() {
        let tree = TechTree::default_tree();
        let (a, b) = (smelt("iron"), smelt("gold"));
        let bank = bank_of(&[(&a.0, a.1), (&b.0, b.1)]);
        let t = &abstract_pattern(&[0, 1], &bank, &tree).unwrap()[0];
        let values = t.supported_values(&tree);
        assert!(values.contains("copper"));
        for v in values {
            let plan = t.instantiate(&v);
            assert!(verify(&plan, &[], &WorldState::infinite_resources(&tree), &tree).passed(), "{v}");
        }
    }

    #[test]
    fn singleton_cluster_is_rejected() {
        let tree = TechTree::default_tree();
        let a = smelt("iron");
        let bank = bank_of(&[(&a.0, a.1)]);
        assert!(matches!(abstract_pattern(&[0], &bank, &tree), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn unalignable_plans_give_nothing() {
        let tree = TechTree::default_tree();
        let a = smelt("iron");
        let b = ("oak_planks".to_string(), vec![Action::gather("oak_log", 1), Action::craft("oak_planks")]);
        let bank = bank_of(&[(&a.0, a.1.clone()), (&b.0, b.1)]);
        assert!(abstract_pattern(&[0, 1], &bank, &tree).unwrap().is_empty());
        let c = ("stick".to_string(), vec![Action::gather("oak_log", 1), Action::craft("oak_planks"), Action::craft("stick")]);
        let bank = bank_of(&[(&a.0, a.1), (&c.0, c.1)]);
        assert!(abstract_pattern(&[0, 1], &bank, &tree).unwrap().is_empty());
    }

    #[test]
    fn identical_plans_have_no_variable() {
        let tree = TechTree::default_tree();
        let a = smelt("iron");
        let bank = bank_of(&[(&a.0, a.1.clone()), ("gold_ingot", a.1)]);
        assert!(abstract_pattern(&[0, 1], &bank, &tree).unwrap().is_empty());
    }
}
