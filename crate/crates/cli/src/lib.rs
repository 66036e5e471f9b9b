//! Configuration, experiment runners and output files for the `frontlab` binary.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod plot;
pub mod records;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind, Options};
pub use error::{CliError, CliResult};
pub use runner::{resume, run_experiment, with_threads, RunOutcome};
