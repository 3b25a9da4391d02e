//! Library side of the `peristaltic` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod range;

use std::path::PathBuf;

use peristaltic_core::control::ControlError;
use peristaltic_core::geometry::GeometryError;
use peristaltic_core::plant::PlantError;
use peristaltic_core::telemetry::TelemetryError;
use thiserror::Error;

pub use commands::{cmd_calibrate, cmd_run, cmd_sweep, cmd_validate, run_summary, write_sweep, ValidationSummary};
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("bad range: {0}")]
    Range(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

impl CliError {
    /// Usage and parse problems exit with 2, everything else with 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse { .. } | Self::Range(_) => 2,
            _ => 1,
        }
    }
}
