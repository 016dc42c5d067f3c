//! Configuration, experiment harness and subcommands behind the `gvd` binary.

pub mod commands;
pub mod config;
pub mod experiment;

pub use config::ExperimentConfig;
pub use experiment::{EvalReport, Experiment};
