//! Simulation and evaluation toolkit for charge-based power-side-channel
//! countermeasures: synthetic AES traces, a switched-capacitor supply model,
//! randomized capacitor scheduling, and CPA/TVLA attacks.

pub mod attack;
pub mod circuit;
pub mod error;
pub mod experiment;
pub mod overhead;
pub mod shuffler;
pub mod trace;
pub mod tracefile;

pub use error::{AttackError, CircuitError, Error, ErrorClass, ShuffleError, TraceError};
pub use trace::{Block, LeakageParams, TraceSet};
