//! Experiment harness: configuration, Monte Carlo runs, CSV and SVG output.

pub mod config;
pub mod experiment;
pub mod output;
pub mod plot;

pub use config::{dbm_to_watts, watts_to_dbm, ExperimentConfig, ExperimentKind};
pub use experiment::{run_experiment, ExperimentOutput, Scheme, SummaryRow, TrialRecord, TrialTiming};
pub use output::emit_outputs;
