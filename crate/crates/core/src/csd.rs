//! Contextual state descriptors: metadata plus five axis payloads.
//!
//! Each payload holds canonical (sorted, de-duplicated) statements and the
//! embedding of their tokens. Content is extracted by fixed rules from a task
//! record, the world snapshot and the item catalog.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, Encoder, HASH_VERSION};
use crate::error::{Error, Result};
use crate::world_sim::{Action, RecipeKind, TechTree, WorldState};

/// Version of the rule-based extractor, recorded in metadata.
pub const BUILDER_VERSION: &str = "rules/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Structural,
    Attribute,
    Procedural,
    Functional,
    Interaction,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::Structural,
        Axis::Attribute,
        Axis::Procedural,
        Axis::Functional,
        Axis::Interaction,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Short key used in the JSON schema.
    pub fn key(self) -> &'static str {
        match self {
            Axis::Structural => "struct",
            Axis::Attribute => "attr",
            Axis::Procedural => "proc",
            Axis::Functional => "func",
            Axis::Interaction => "inter",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Structural => "structural",
            Axis::Attribute => "attribute",
            Axis::Procedural => "procedural",
            Axis::Functional => "functional",
            Axis::Interaction => "interaction",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        Axis::ALL
            .into_iter()
            .find(|a| a.key() == s || a.name() == s || a.name()[..1] == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown axis `{s}`")))
    }
}

/// Lowercase and split on anything that is not ASCII alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisPayload {
    content: Vec<String>,
    embedding: Embedding,
}

impl AxisPayload {
    /// Canonicalises `statements` and embeds them.
    pub fn new<I, S>(statements: I, encoder: &Encoder) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = statements.into_iter().map(Into::into).collect();
        let content: Vec<String> = set.into_iter().collect();
        let embedding = encoder.encode_text(&tokens_of(&content));
        Self { content, embedding }
    }

    pub fn empty(encoder: &Encoder) -> Self {
        Self::new(Vec::<String>::new(), encoder)
    }

    pub fn content(&self) -> &[String] {
        &self.content
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn is_empty(&self) -> bool {
        self.content.is_empty()
    }

    fn check(&self, axis: Axis) -> std::result::Result<(), String> {
        if self.content.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("{} content is not in canonical order", axis.key()));
        }
        let encoder = Encoder::new(self.embedding.dim()).map_err(|e| e.to_string())?;
        if !encoder.encode_text(&tokens_of(&self.content)).bit_eq(&self.embedding) {
            return Err(format!("{} embedding does not match its content", axis.key()));
        }
        Ok(())
    }
}

fn tokens_of(content: &[String]) -> Vec<String> {
    content.iter().flat_map(|s| tokenize(s)).collect()
}

/// Episode-relative creation time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Timestamp {
    pub episode: u32,
    pub step: u32,
}

impl Timestamp {
    pub fn new(episode: u32, step: u32) -> Self {
        Self { episode, step }
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.episode, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsdMeta {
    pub created_at: Timestamp,
    pub source_env: String,
    pub model_versions: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsdRepr {
    meta: CsdMeta,
    #[serde(rename = "struct")]
    structural: AxisPayload,
    attr: AxisPayload,
    proc: AxisPayload,
    func: AxisPayload,
    inter: AxisPayload,
}

/// Descriptor with all five axes always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CsdRepr", from = "CsdRepr")]
pub struct Csd {
    pub meta: CsdMeta,
    axes: [AxisPayload; 5],
}

impl From<CsdRepr> for Csd {
    fn from(r: CsdRepr) -> Self {
        Self {
            meta: r.meta,
            axes: [r.structural, r.attr, r.proc, r.func, r.inter],
        }
    }
}

impl From<Csd> for CsdRepr {
    fn from(c: Csd) -> Self {
        let [structural, attr, proc, func, inter] = c.axes;
        Self {
            meta: c.meta,
            structural,
            attr,
            proc,
            func,
            inter,
        }
    }
}

impl Csd {
    pub fn new(meta: CsdMeta, axes: [AxisPayload; 5]) -> Self {
        Self { meta, axes }
    }

    pub fn axis(&self, axis: Axis) -> &AxisPayload {
        &self.axes[axis.index()]
    }

    pub fn axes(&self) -> impl Iterator<Item = (Axis, &AxisPayload)> {
        Axis::ALL.into_iter().zip(self.axes.iter())
    }

    pub fn dim(&self) -> usize {
        self.axes[0].embedding.dim()
    }

    /// Replace one axis, re-embedding its content.
    pub fn with_axis<I, S>(mut self, axis: Axis, statements: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let encoder = Encoder::new(self.dim()).expect("existing dimension is valid");
        self.axes[axis.index()] = AxisPayload::new(statements, &encoder);
        self
    }

    /// Overwrite an embedding without touching content. Only for derived,
    /// never-persisted descriptors such as cluster centroids.
    pub(crate) fn set_embedding_unchecked(&mut self, axis: Axis, embedding: Embedding) {
        self.axes[axis.index()].embedding = embedding;
    }

    /// Equality of axis contents, ignoring metadata.
    pub fn canonical_eq(&self, other: &Csd) -> bool {
        self.axes
            .iter()
            .zip(&other.axes)
            .all(|(a, b)| a.content == b.content)
    }

    /// Verify canonical ordering, uniform dimension and embedding coherence.
    pub fn check_coherence(&self) -> std::result::Result<(), String> {
        let dim = self.dim();
        for (axis, p) in self.axes() {
            if p.embedding.dim() != dim {
                return Err(format!("{} embedding has dimension {}, expected {dim}", axis.key(), p.embedding.dim()));
            }
            p.check(axis)?;
        }
        if self.meta.source_env.is_empty() || self.meta.model_versions.is_empty() {
            return Err("metadata is incomplete".into());
        }
        Ok(())
    }
}

/// Canonical tokens of one axis.
pub fn csd_axis_tokens(csd: &Csd, axis: Axis) -> Vec<String> {
    tokens_of(&csd.axis(axis).content)
}

/// What happened in one task: its name, goal item, actions and the items it touched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_name: String,
    pub goal: String,
    pub actions: Vec<Action>,
    pub items: BTreeSet<String>,
}

impl TaskRecord {
    /// Derive the involved items from the actions and the tree.
    pub fn from_plan(goal: &str, actions: &[Action], tree: &TechTree) -> Result<Self> {
        let mut items = BTreeSet::new();
        if !goal.is_empty() {
            items.insert(goal.to_string());
        }
        for a in actions {
            match a {
                Action::Gather { item, .. } => {
                    items.insert(item.clone());
                }
                Action::Place { station } => {
                    items.insert(station.clone());
                }
                Action::Craft { recipe } | Action::Smelt { recipe } => {
                    let r = tree
                        .recipe(recipe)
                        .ok_or_else(|| Error::UnknownItem(recipe.clone()))?;
                    items.insert(r.output.clone());
                    items.extend(r.inputs.keys().cloned());
                    items.extend(r.station.iter().cloned());
                }
            }
        }
        Ok(Self {
            task_name: goal.to_string(),
            goal: goal.to_string(),
            actions: actions.to_vec(),
            items,
        })
    }

    /// Single-step description of a goal, used as a retrieval query.
    pub fn sketch(goal: &str, tree: &TechTree) -> Result<Self> {
        if !tree.contains(goal) {
            return Err(Error::UnknownItem(goal.to_string()));
        }
        let step = match tree.primary_recipe(goal) {
            Some(r) if r.kind == RecipeKind::Craft => vec![Action::craft(r.id.clone())],
            Some(r) => vec![Action::smelt(r.id.clone())],
            None if tree.gather_rule(goal).is_some() => vec![Action::gather(goal, 1)],
            None => vec![],
        };
        Self::from_plan(goal, &step, tree)
    }
}

/// Rule-based CSD extraction with a fixed encoder.
#[derive(Debug, Clone, Copy)]
pub struct CsdBuilder<'a> {
    tree: &'a TechTree,
    encoder: Encoder,
}

impl<'a> CsdBuilder<'a> {
    pub fn new(tree: &'a TechTree, encoder: Encoder) -> Self {
        Self { tree, encoder }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn tree(&self) -> &'a TechTree {
        self.tree
    }

    pub fn meta(&self, created_at: Timestamp) -> CsdMeta {
        let model_versions = BTreeMap::from([
            ("csd_builder".to_string(), BUILDER_VERSION.to_string()),
            ("embedding".to_string(), HASH_VERSION.to_string()),
            ("embedding_dim".to_string(), self.encoder.dim().to_string()),
        ]);
        CsdMeta {
            created_at,
            source_env: self.tree.source_id(),
            model_versions,
        }
    }

    pub fn build(&self, record: &TaskRecord, snapshot: &WorldState) -> Result<Csd> {
        let tree = self.tree;
        for item in &record.items {
            if !tree.contains(item) {
                return Err(Error::UnknownItem(item.clone()));
            }
        }
        let mut structural = Vec::new();
        let mut procedural = Vec::new();
        let mut interaction = Vec::new();
        let mut used_stations = BTreeSet::new();
        for a in &record.actions {
            procedural.push(a.kind());
            match a {
                Action::Gather { item, .. } => {
                    let rule = tree
                        .gather_rule(item)
                        .ok_or_else(|| Error::UnknownItem(item.clone()))?;
                    interaction.push(format!("gathers:{item}"));
                    if rule.tier > 0 {
                        interaction.push(format!("mines_with:tier{}", rule.tier));
                    }
                }
                Action::Craft { recipe } | Action::Smelt { recipe } => {
                    let r = tree
                        .recipe(recipe)
                        .ok_or_else(|| Error::UnknownItem(recipe.clone()))?;
                    structural.push(format!("shape:{}:{}", r.output, r.grid_shape));
                    if let Some(st) = &r.station {
                        interaction.push(format!("uses:{st}"));
                        used_stations.insert(st.clone());
                    }
                }
                Action::Place { station } => {
                    if !tree.contains(station) {
                        return Err(Error::UnknownItem(station.clone()));
                    }
                    interaction.push(format!("places:{station}"));
                    used_stations.insert(station.clone());
                }
            }
        }
        for st in &used_stations {
            if snapshot.placed_stations.contains(st) {
                structural.push(format!("placed:{st}"));
            }
        }

        let mut attribute = Vec::new();
        let mut functional = Vec::new();
        for name in &record.items {
            let item = tree.item(name).expect("checked above");
            attribute.push(format!("material:{}", item.family));
            for attr in &item.attributes {
                attribute.push(format!("{name}: {}", attr.to_lowercase()));
            }
            for func in &item.functions {
                functional.push(format!("{name}: {}", func.to_lowercase()));
            }
        }

        let chain = (!procedural.is_empty()).then(|| procedural.join("→"));
        let enc = &self.encoder;
        let axes = [
            AxisPayload::new(structural, enc),
            AxisPayload::new(attribute, enc),
            AxisPayload::new(chain, enc),
            AxisPayload::new(functional, enc),
            AxisPayload::new(interaction, enc),
        ];
        let created_at = Timestamp::new(snapshot.episode, snapshot.episode_step);
        Ok(Csd::new(self.meta(created_at), axes))
    }
}

/// Build with the default encoder.
pub fn build_csd(record: &TaskRecord, snapshot: &WorldState, tree: &TechTree) -> Result<Csd> {
    CsdBuilder::new(tree, Encoder::default()).build(record, snapshot)
}
