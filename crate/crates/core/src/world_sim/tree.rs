//! Item catalog, recipes and gathering rules.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TREE_JSON: &str = include_str!("../../data/default_tree.json");

/// Catalog entry for one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDef {
    pub name: String,
    /// Material family used for attribute-level analogies (e.g. `ore`, `metal`).
    pub family: String,
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub functions: Vec<String>,
    /// Mining tier granted when held (pickaxes only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_tier: Option<u8>,
    #[serde(default)]
    pub fuel: bool,
    #[serde(default)]
    pub station: bool,
    /// Task family when the item is a curriculum goal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_family: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    Craft,
    Smelt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub id: String,
    pub kind: RecipeKind,
    pub inputs: BTreeMap<String, u32>,
    pub output: String,
    pub count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<String>,
    pub grid_shape: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatherRule {
    pub resource: String,
    /// Minimum pickaxe tier required; 0 means bare hands.
    pub tier: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TreeFile {
    name: String,
    version: String,
    items: Vec<ItemDef>,
    recipes: Vec<Recipe>,
    gather_rules: Vec<GatherRule>,
}

/// Validated, acyclic crafting graph.
#[derive(Debug, Clone)]
pub struct TechTree {
    file: TreeFile,
    item_index: HashMap<String, usize>,
    recipe_index: HashMap<String, usize>,
    gather_index: HashMap<String, usize>,
}

impl TechTree {
    /// The tree shipped with the crate.
    pub fn default_tree() -> Self {
        Self::from_json(DEFAULT_TREE_JSON).expect("shipped tech tree is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TreeFile = serde_json::from_str(text)?;
        Self::build(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file).expect("tree serializes")
    }

    fn build(file: TreeFile) -> Result<Self> {
        let mut item_index = HashMap::new();
        for (i, item) in file.items.iter().enumerate() {
            if item.name.is_empty() {
                return Err(Error::Validation("item with empty name".into()));
            }
            if item_index.insert(item.name.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate item `{}`", item.name)));
            }
            if item.family.is_empty() {
                return Err(Error::Validation(format!("item `{}` has empty family", item.name)));
            }
            if item.attributes.iter().chain(&item.functions).any(|s| s.trim().is_empty()) {
                return Err(Error::Validation(format!(
                    "item `{}` has an empty attribute or function string",
                    item.name
                )));
            }
        }
        let known = |name: &str, ctx: &str| -> Result<()> {
            if item_index.contains_key(name) {
                Ok(())
            } else {
                Err(Error::Validation(format!("{ctx} references unknown item `{name}`")))
            }
        };

        let mut recipe_index = HashMap::new();
        for (i, r) in file.recipes.iter().enumerate() {
            let ctx = format!("recipe `{}`", r.id);
            if recipe_index.insert(r.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate recipe id `{}`", r.id)));
            }
            known(&r.output, &ctx)?;
            if r.inputs.is_empty() || r.count == 0 || r.inputs.values().any(|c| *c == 0) {
                return Err(Error::Validation(format!("{ctx} has empty inputs or zero counts")));
            }
            for input in r.inputs.keys() {
                known(input, &ctx)?;
            }
            if let Some(st) = &r.station {
                known(st, &ctx)?;
                if !file.items[item_index[st]].station {
                    return Err(Error::Validation(format!("{ctx} uses non-station `{st}` as station")));
                }
            }
        }

        let mut gather_index = HashMap::new();
        for (i, g) in file.gather_rules.iter().enumerate() {
            known(&g.resource, "gather rule")?;
            if gather_index.insert(g.resource.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate gather rule for `{}`", g.resource)));
            }
            if g.tier > 0 && !file.items.iter().any(|it| it.tool_tier.is_some_and(|t| t >= g.tier)) {
                return Err(Error::Validation(format!(
                    "gather rule for `{}` needs tier {} but no such tool exists",
                    g.resource, g.tier
                )));
            }
        }

        let tree = Self {
            file,
            item_index,
            recipe_index,
            gather_index,
        };
        tree.check_acyclic()?;
        Ok(tree)
    }

    /// Dependency edges: output <- inputs/station, resource <- minimal tool.
    fn dependencies<'a>(&'a self, item: &'a str) -> Vec<&'a str> {
        let mut deps: Vec<&str> = Vec::new();
        for r in self.recipes_producing(item) {
            deps.extend(r.inputs.keys().map(String::as_str));
            if let Some(st) = &r.station {
                deps.push(st);
            }
        }
        if let Some(rule) = self.gather_rule(item) {
            if let Some(tool) = self.minimal_tool(rule.tier) {
                deps.push(&tool.name);
            }
        }
        deps
    }

    fn check_acyclic(&self) -> Result<()> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Active,
            Done,
        }
        fn visit<'a>(
            tree: &'a TechTree,
            item: &'a str,
            marks: &mut HashMap<&'a str, Mark>,
            path: &mut Vec<&'a str>,
        ) -> Result<()> {
            match marks.get(item).copied().unwrap_or(Mark::New) {
                Mark::Done => return Ok(()),
                Mark::Active => {
                    path.push(item);
                    return Err(Error::Validation(format!(
                        "recipe cycle through `{item}`: {}",
                        path.join(" <- ")
                    )));
                }
                Mark::New => {}
            }
            marks.insert(item, Mark::Active);
            path.push(item);
            for dep in tree.dependencies(item) {
                visit(tree, dep, marks, path)?;
            }
            path.pop();
            marks.insert(item, Mark::Done);
            Ok(())
        }
        let mut marks = HashMap::new();
        for item in &self.file.items {
            visit(self, &item.name, &mut marks, &mut Vec::new())?;
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    /// `name/version`, recorded as the CSD source environment.
    pub fn source_id(&self) -> String {
        format!("{}/{}", self.file.name, self.file.version)
    }

    pub fn items(&self) -> &[ItemDef] {
        &self.file.items
    }

    pub fn recipes(&self) -> &[Recipe] {
        &self.file.recipes
    }

    pub fn gather_rules(&self) -> &[GatherRule] {
        &self.file.gather_rules
    }

    pub fn item(&self, name: &str) -> Option<&ItemDef> {
        self.item_index.get(name).map(|&i| &self.file.items[i])
    }

    pub fn item_position(&self, name: &str) -> Option<usize> {
        self.item_index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.item_index.contains_key(name)
    }

    pub fn recipe(&self, id: &str) -> Option<&Recipe> {
        self.recipe_index.get(id).map(|&i| &self.file.recipes[i])
    }

    pub fn gather_rule(&self, resource: &str) -> Option<&GatherRule> {
        self.gather_index.get(resource).map(|&i| &self.file.gather_rules[i])
    }

    /// Recipes producing `item`, in file order.
    pub fn recipes_producing<'a>(&'a self, item: &'a str) -> impl Iterator<Item = &'a Recipe> + 'a {
        self.file.recipes.iter().filter(move |r| r.output == item)
    }

    pub fn primary_recipe<'a>(&'a self, item: &'a str) -> Option<&'a Recipe> {
        self.recipes_producing(item).next()
    }

    /// Lowest-tier tool that satisfies `tier` (ties broken by catalog order).
    pub fn minimal_tool(&self, tier: u8) -> Option<&ItemDef> {
        if tier == 0 {
            return None;
        }
        self.file
            .items
            .iter()
            .filter(|it| it.tool_tier.is_some_and(|t| t >= tier))
            .min_by_key(|it| it.tool_tier)
    }

    /// Tools able to satisfy `tier`, lowest tier first.
    pub fn tools_for_tier(&self, tier: u8) -> Vec<&ItemDef> {
        let mut tools: Vec<&ItemDef> = self
            .file
            .items
            .iter()
            .filter(|it| it.tool_tier.is_some_and(|t| t >= tier))
            .collect();
        tools.sort_by_key(|it| it.tool_tier);
        tools
    }

    /// Fuel items in catalog order.
    pub fn fuels(&self) -> impl Iterator<Item = &ItemDef> {
        self.file.items.iter().filter(|it| it.fuel)
    }

    pub fn is_station(&self, name: &str) -> bool {
        self.item(name).is_some_and(|it| it.station)
    }

    pub fn tool_tier(&self, name: &str) -> Option<u8> {
        self.item(name).and_then(|it| it.tool_tier)
    }

    /// Items tagged as curriculum goals with their family.
    pub fn goal_items(&self) -> Vec<(&str, &str)> {
        self.file
            .items
            .iter()
            .filter_map(|it| it.goal_family.as_deref().map(|f| (it.name.as_str(), f)))
            .collect()
    }

    pub fn goal_family(&self, item: &str) -> Option<&str> {
        self.item(item).and_then(|it| it.goal_family.as_deref())
    }

    /// Names of every item mentioned anywhere in the catalog.
    pub fn item_names(&self) -> BTreeSet<&str> {
        self.file.items.iter().map(|it| it.name.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(recipes: &str) -> String {
        format!(
            r#"{{"name":"t","version":"1",
            "items":[{{"name":"a","family":"x"}},{{"name":"b","family":"x"}}],
            "recipes":{recipes},
            "gather_rules":[{{"resource":"a","tier":0}}]}}"#
        )
    }

    #[test]
    fn default_tree_loads() {
        let tree = TechTree::default_tree();
        assert!(tree.items().len() >= 30);
        assert!(tree.contains("wooden_pickaxe"));
    }

    #[test]
    fn default_tree_has_vanilla_plank_ratio() {
        let tree = TechTree::default_tree();
        let r = tree.primary_recipe("oak_planks").unwrap();
        assert_eq!(r.inputs, BTreeMap::from([("oak_log".to_string(), 1)]));
        assert_eq!(r.count, 4);
        assert_eq!(r.station, None);
    }

    #[test]
    fn self_feeding_recipe_is_a_cycle() {
        let json = tiny(r#"[{"id":"b","kind":"craft","inputs":{"b":1},"output":"b","count":1,"grid_shape":"single"}]"#);
        let err = TechTree::from_json(&json).unwrap_err();
        assert!(matches!(&err, Error::Validation(m) if m.contains("cycle") && m.contains("`b`")), "{err}");
    }

    #[test]
    fn two_step_cycle_is_detected() {
        let json = tiny(
            r#"[{"id":"b","kind":"craft","inputs":{"a":1},"output":"b","count":1,"grid_shape":"single"},
                {"id":"a2","kind":"craft","inputs":{"b":1},"output":"a","count":1,"grid_shape":"single"}]"#,
        );
        assert!(matches!(TechTree::from_json(&json), Err(Error::Validation(_))));
    }

    #[test]
    fn dangling_reference_names_offender() {
        let json = tiny(r#"[{"id":"b","kind":"craft","inputs":{"ghost":1},"output":"b","count":1,"grid_shape":"single"}]"#);
        let err = TechTree::from_json(&json).unwrap_err();
        assert!(err.to_string().contains("ghost"), "{err}");
    }

    #[test]
    fn round_trips_through_json() {
        let tree = TechTree::default_tree();
        let again = TechTree::from_json(&tree.to_json()).unwrap();
        assert_eq!(again.items(), tree.items());
        assert_eq!(again.recipes(), tree.recipes());
    }
}
