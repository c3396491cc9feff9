//! Experiment orchestration behind the `viewplan` binary: configuration,
//! pipeline commands, and the teleoperation websocket server.

pub mod commands;
pub mod config;
pub mod error;
pub mod teleop;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
