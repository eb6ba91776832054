use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic: expected \"TVTF\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("version mismatch: file has format version {found}, reader supports {supported}")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("unsupported flag bits {0:#06x}")]
    UnknownFlags(u16),
    #[error("truncated payload: needed {needed} bytes, file has {available}")]
    Truncated { needed: usize, available: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty trace set: {0}")]
    Empty(String),
    #[error("non-finite sample at trace {trace}, sample {sample}")]
    NonFinite { trace: usize, sample: usize },
    #[error("invalid leakage parameters: {0}")]
    InvalidParams(String),
    #[error("malformed CSV at line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum CircuitError {
    #[error("invalid circuit configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("schedule has {schedule} capacitors but the circuit has {circuit}")]
    CapacitorCountMismatch { schedule: usize, circuit: usize },
    #[error("phase {phase} has no driving capacitor, the load would be unpowered")]
    UnpoweredPhase { phase: usize },
    #[error("schedule covers {available} phases, simulation needs {needed}")]
    ScheduleTooShort { needed: usize, available: usize },
    #[error("capacitor {capacitor} fell to {voltage} V in phase {phase}; load current exceeds storage")]
    Brownout {
        capacitor: usize,
        phase: usize,
        voltage: f64,
    },
    #[error("{architecture} needs {needed} capacitors, got {got}")]
    UnsupportedCapacitorCount {
        architecture: &'static str,
        needed: String,
        got: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Error, PartialEq)]
pub enum ShuffleError {
    #[error("LFSR state must be nonzero")]
    ZeroState,
    #[error("unsupported LFSR width {0}")]
    UnsupportedWidth(u32),
    #[error("taps {taps:#x} are not maximal-length for width {width} (period {period})")]
    NotMaximal { taps: u64, width: u32, period: u64 },
    #[error("invalid chain layout: {0}")]
    InvalidChain(String),
    #[error("pool size {pool} exceeds chain output range {range}")]
    PoolTooLarge { pool: usize, range: u64 },
    #[error("pool size must be at least 1")]
    EmptyPool,
    #[error("invalid shuffle parameters: {0}")]
    InvalidParams(String),
    #[error("pool exhausted: need {needed} capacitors from a pool of {available}")]
    PoolExhausted { needed: usize, available: usize },
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("need at least {needed} traces, got {got}")]
    TooFewTraces { needed: usize, got: usize },
    #[error("target byte {0} out of range 0..16")]
    BadTargetByte(usize),
    #[error("checkpoint {checkpoint} exceeds the {available} available traces")]
    CheckpointOutOfRange { checkpoint: usize, available: usize },
    #[error("checkpoints must be non-empty and strictly increasing")]
    BadCheckpoints,
    #[error("trace sets differ in geometry: {0}")]
    GeometryMismatch(String),
    #[error("invalid window: {0}")]
    BadWindow(String),
    #[error("fixed set must use a single plaintext, trace {0} differs")]
    NotFixedInput(usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum OverheadError {
    #[error("overhead parameter {name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// Failures of the end-to-end experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("cannot parse configuration {path}: {reason}")]
    ConfigParse { path: PathBuf, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Shuffle(#[from] ShuffleError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Overhead(#[from] OverheadError),
}

impl PartialEq for TraceError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse failure class, used by the CLI for its exit code.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config { .. } | Error::ConfigParse { .. } => ErrorClass::Config,
            Error::Io { .. }
            | Error::Trace(TraceError::Io { .. })
            | Error::Attack(AttackError::Io { .. }) => ErrorClass::Io,
            Error::Trace(_) => ErrorClass::Format,
            Error::Circuit(_) | Error::Shuffle(_) => ErrorClass::Simulation,
            Error::Attack(_) | Error::Overhead(_) => ErrorClass::Analysis,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Io,
    Format,
    Simulation,
    Analysis,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Io => 3,
            ErrorClass::Format => 4,
            ErrorClass::Simulation => 5,
            ErrorClass::Analysis => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Io => "io",
            ErrorClass::Format => "format",
            ErrorClass::Simulation => "simulation",
            ErrorClass::Analysis => "analysis",
        }
    }
}
