//! Configured experiments and parameter sweeps.

mod config;
mod run;
mod sweep;

pub use config::{
    Architecture, AttackSection, CircuitSection, ExperimentConfig, ShuffleSection, WindowSection,
};
pub use run::{derive_seed, file_sha256, run_experiment, simulate_architecture, RunOutcome, RunSummary, SubSeeds};
pub use sweep::{sweep, SweepAxis, SweepRow, SweepSummary};
