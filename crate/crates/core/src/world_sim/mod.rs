//! Deterministic crafting world: tech tree, state, single-step kernel and plan execution.

mod sim;
mod tree;

pub use sim::{
    execute, parse_plan, Action, FailureReason, Outcome, StateDelta, Trace, TraceStep, WorldState,
};
pub use tree::{GatherRule, ItemDef, Recipe, RecipeKind, TechTree};

/// Checks that no successful gather in `trace` happened without a qualifying tool.
/// `start` is the state the trace was executed from.
pub fn audit_gating(trace: &Trace, start: &WorldState, tree: &TechTree) -> Result<(), String> {
    let mut state = start.clone();
    for (i, step) in trace.steps.iter().enumerate() {
        if let (Action::Gather { item, .. }, Outcome::Ok) = (&step.action, step.outcome) {
            let need = tree.gather_rule(item).map(|r| r.tier).unwrap_or(u8::MAX);
            if state.best_tier(tree) < need {
                return Err(format!("step {i}: gathered `{item}` without a tier-{need} tool"));
            }
        }
        state.apply(&step.action, tree);
    }
    Ok(())
}
