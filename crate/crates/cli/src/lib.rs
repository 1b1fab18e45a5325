//! Config-driven experiment runner for the `subgrad-langevin` samplers.
//!
//! An experiment is a JSON document (see [`config::ExperimentConfig`]). A run
//! validates every sampler precondition first, then writes `curves.csv`,
//! `summary.json`, a config echo and, for imaging experiments, mean and
//! variance images as 16-bit PGM.

pub mod config;
pub mod error;
pub mod experiment;
pub mod pgm;
pub mod presets;
pub mod run;
pub mod synthetic;

pub use config::{ExperimentConfig, ExperimentKind, SamplerSpec};
pub use error::{CliError, CliResult};
pub use experiment::{all_caps, prepare};
pub use run::{execute, run_experiment, write_outputs, CurveKind, CurveRow, RunReport};
