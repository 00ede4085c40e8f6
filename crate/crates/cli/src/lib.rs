//! Command-line experiment runner: dataset generation, single training
//! runs, ablation sweeps and prediction export.

pub mod ablation;
pub mod commands;
pub mod config;

pub use ablation::{run_ablation, AblationReport};
pub use commands::{generate, load_dataset, scatter, train};
pub use config::ExperimentConfig;

use ssreg_core::Error;

/// Process exit status for a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Checkpoint { .. } => 3,
        Error::Divergence(_) => 4,
    }
}
