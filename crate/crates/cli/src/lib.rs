//! Experiment harness for the nested and tempered samplers: configs,
//! pilot-then-fixed workflows, repeated runs and their summary tables.

pub mod config;
pub mod error;
pub mod experiment;
pub mod export;
pub mod stats;

pub use config::{Algorithm, ExperimentConfig, KernelSection, Overrides};
pub use error::CliError;
pub use experiment::{run_experiment, ExperimentOutput, ReplayFile};
pub use export::export_diagnostic_curve;
pub use stats::{relative_wnv, wnv, RunRow, Summary};
