//! Experiment runner for the `bitstab` controllers: TOML configuration in,
//! JSON summary and optional CSV traces out.

pub mod config;
pub mod report;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{run_experiment, write_summary, ExperimentSummary, Outputs, RunError};
