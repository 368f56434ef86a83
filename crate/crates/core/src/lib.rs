//! Simulation of agent-environment processes with a tabular actor-critic, qualia
//! objective estimators and representation-robustness checks.

pub mod aei;
pub mod agents;
pub mod environments;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod process;
pub mod robustness;
pub mod seeding;

pub use error::{Error, Result};
