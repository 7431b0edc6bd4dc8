//! Experiment runner around `cis-engine`: configuration, presets, parallel
//! replication and CSV/JSON output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod config;
pub mod experiment;
pub mod output;
pub mod presets;

pub use config::{ConfigError, ExperimentConfig, Method, Overrides, Target};
pub use experiment::{run_experiment, ReplicateRow, RunError, RunOutput, RunSummary};
