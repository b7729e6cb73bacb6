//! Experiment runner: JSON configs in, JSON reports, CSV tables and a
//! hashed manifest out.

pub mod config;
pub mod run;

use std::io;

pub use config::{validate_config, Diagnostic, ExperimentConfig, Kind};
pub use run::{run_experiment, FileEntry, RunManifest, RunOutcome};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("could not parse config: {0}")]
    Parse(String),

    #[error("invalid config: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),

    #[error(transparent)]
    Core(#[from] sdde_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("{0}")]
    Runtime(String),
}

impl LabError {
    /// 2 for anything the config could fix, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use sdde_core::Error as E;
        match self {
            Self::Parse(_) | Self::Invalid(_) => 2,
            Self::Core(E::Config(_) | E::Domain(_) | E::Parse { .. }) => 2,
            Self::Core(_) => 3,
            Self::Io(_) | Self::Runtime(_) => 1,
        }
    }
}
