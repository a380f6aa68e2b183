//! Experiment harness and command-line front end for [`pggr_core`]:
//! repeated seeded runs, summary statistics, sweeps and their on-disk records.

pub mod cli;
pub mod config;
pub mod exec;
pub mod harness;
pub mod output;

pub use config::{ConfigError, ExperimentConfig};
pub use harness::{
    repeat_runs, summarize, Experiment, ExperimentSummary, Harness, HarnessError, RunRecord, RunSpec, SweepParam,
    Timing, SCHEMA_VERSION,
};
