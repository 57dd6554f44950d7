//! Command line, file formats and experiment orchestration for real-centric
//! envelope modeling on top of [`rem_core`].
//!
//! * [`config`]: the sectioned `key = value` experiment config.
//! * [`io`]: corpus manifests, payload files, checkpoints and CSV helpers.
//! * [`experiments`]: training pipeline, ablations and the evaluation
//!   experiments shared by the CLI and the acceptance tests.
//! * [`cli`]: the `rem` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod parallel;
pub mod plot;

pub use config::ExperimentConfig;
pub use error::{RemError, Result};
