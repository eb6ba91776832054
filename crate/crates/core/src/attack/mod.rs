//! Key recovery and leakage assessment on trace sets.

mod cpa;
mod mtd;
mod tvla;
mod window;

pub use cpa::{cpa_attack, AttackReport, CpaAccumulator};
pub use mtd::{compute_mtd, default_checkpoints, geometric_checkpoints, MtdResult};
pub use tvla::{tvla, welch_t, welch_t_test, TvlaReport, TVLA_THRESHOLD};
pub use window::{integrate_windows, sliding_window_cpa};
