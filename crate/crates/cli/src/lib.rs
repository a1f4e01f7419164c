//! Library side of the `sdai` tool: configuration, subcommands and the
//! teleoperation bridge.

pub mod commands;
pub mod config;
pub mod teleop;

mod error;

pub use config::{ExperimentConfig, Misalignment};
pub use error::{CliError, Result};
