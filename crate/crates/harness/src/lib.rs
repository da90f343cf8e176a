//! Monte Carlo experiment harness: configuration files, seeded trial
//! execution, detection statistics and CSV/JSON outputs.

pub mod config;
pub mod experiment;
pub mod manifest;
pub mod results;
pub mod spectrum;

pub use config::{ExperimentConfig, PipelineSpec, SweepSpec};
pub use experiment::{detection_curve, detection_probability, run_experiment, ResultRow, RunOptions, TrialStatus};
