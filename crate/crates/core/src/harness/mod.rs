//! Experiment orchestration, result files and the acceptance suite.

pub mod acceptance;
pub mod config;
pub mod experiment;
pub mod output;
