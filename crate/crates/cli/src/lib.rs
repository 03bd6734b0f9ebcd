//! Experiment runner for the offset-planning stack: configuration files,
//! training and evaluation runs, raceline generation and run comparison.

pub mod assets;
pub mod compare;
pub mod config;
pub mod run;

pub use compare::{compare_runs, Comparison, RunSummary};
pub use config::{ConfigError, ExperimentConfig, Mode};
pub use run::{evaluate, run, EvalSummary, RunReport};
