//! Structured episodic memory with five-axis retrieval and analogical task induction,
//! exercised on a symbolic crafting world.

pub mod agent_loop;
pub mod csd;
pub mod embedding;
pub mod error;
pub mod experiments;
pub mod ical_engine;
pub mod memory_bank;
pub mod planner;
pub mod retrieval;
pub mod verifier;
pub mod world_sim;

pub use error::{Error, Result};
