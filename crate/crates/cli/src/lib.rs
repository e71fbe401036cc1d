//! Experiment pipelines over the `meminfl` library: generate data, run and
//! extend trial stores, estimate, select pairs, and run the oracle, removal,
//! marginal-utility and consistency reports.

pub mod commands;
pub mod config;

pub use config::RunConfig;
