//! Config-driven pipeline over the `duoview` library: data generation,
//! pairing, training, the three evaluation tasks, captioning and the
//! ablation grid.

pub mod commands;
pub mod config;
pub mod pipeline;

use std::path::Path;

pub use commands::{execute, Command, Options};
pub use config::{AblationGrid, EvalConfig, RunConfig};

/// Failure of a command, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, missing inputs or refused overwrites.
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Failed(_) => 1,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Failed(format!("{}: {e}", path.display()))
    }
}

impl From<duoview::Error> for CliError {
    fn from(e: duoview::Error) -> Self {
        use duoview::Error as E;
        match e {
            E::Diverged { .. } => CliError::Diverged(e.to_string()),
            E::Io(_) | E::Json(_) => CliError::Failed(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}
