//! Experiment configuration: one TOML file, one section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::circuit::{spread_capacitances, CircuitConfig, MAX_CAPACITORS};
use crate::error::Error;
use crate::shuffler::{ChainConfig, ShuffleParams};
use crate::trace::{Block, LeakageParams, BLOCK_BYTES};
use crate::tracefile::parse_hex_block;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// The AES current is observed directly.
    Unprotected,
    TwoPhase,
    ThreePhaseReset,
    NPhaseRoundRobin,
    Tvtf,
}

impl Architecture {
    pub const ALL: [Architecture; 5] = [
        Architecture::Unprotected,
        Architecture::TwoPhase,
        Architecture::ThreePhaseReset,
        Architecture::NPhaseRoundRobin,
        Architecture::Tvtf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Unprotected => "unprotected",
            Architecture::TwoPhase => "two_phase",
            Architecture::ThreePhaseReset => "three_phase_reset",
            Architecture::NPhaseRoundRobin => "n_phase_round_robin",
            Architecture::Tvtf => "tvtf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitSection {
    pub n_capacitors: usize,
    pub unit_capacitance: f64,
    /// Fractional linear spread around the unit value, total preserved.
    pub capacitance_spread: f64,
    /// Explicit per-capacitor values; overrides the three fields above.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacitances: Option<Vec<f64>>,
    pub v_dd: f64,
    pub switch_resistance: f64,
    pub phases_per_cycle: usize,
    pub integration_substeps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reset_voltage: Option<f64>,
}

impl Default for CircuitSection {
    fn default() -> Self {
        let c = CircuitConfig::default();
        Self {
            n_capacitors: c.capacitances.len(),
            unit_capacitance: c.capacitances[0],
            capacitance_spread: 0.0,
            capacitances: None,
            v_dd: c.v_dd,
            switch_resistance: c.switch_resistance,
            phases_per_cycle: c.phases_per_cycle,
            integration_substeps: c.integration_substeps,
            reset_voltage: c.reset_voltage,
        }
    }
}

impl CircuitSection {
    pub fn capacitor_values(&self) -> Vec<f64> {
        self.capacitances.clone().unwrap_or_else(|| {
            spread_capacitances(self.n_capacitors, self.unit_capacitance, self.capacitance_spread)
        })
    }

    pub fn resolve(&self, clock_frequency: f64) -> CircuitConfig {
        CircuitConfig {
            v_dd: self.v_dd,
            capacitances: self.capacitor_values(),
            switch_resistance: self.switch_resistance,
            phases_per_cycle: self.phases_per_cycle,
            clock_frequency,
            integration_substeps: self.integration_substeps,
            reset_voltage: self.reset_voltage,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShuffleSection {
    pub m: usize,
    /// Chain preset by output period: 7, 255, 65535 or 4294967295.
    pub period: u64,
    /// Explicit chain; overrides `period`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chain: Option<ChainConfig>,
}

impl Default for ShuffleSection {
    fn default() -> Self {
        Self {
            m: 1,
            period: 255,
            chain: None,
        }
    }
}

impl ShuffleSection {
    pub fn chain_config(&self) -> Result<ChainConfig, Error> {
        match &self.chain {
            Some(c) => Ok(c.clone()),
            None => ChainConfig::preset(self.period).ok_or_else(|| {
                Error::config(
                    "shuffle.period",
                    format!(
                        "no chain preset for period {}; use 7, 255, 65535 or 4294967295, or give [shuffle.chain]",
                        self.period
                    ),
                )
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub window: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub target_byte: usize,
    pub cpa: bool,
    pub mtd: bool,
    pub tvla: bool,
    /// Explicit MTD checkpoints; a geometric grid is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<usize>>,
    pub first_checkpoint: usize,
    pub checkpoints_per_decade: usize,
    /// Traces per TVLA group.
    pub tvla_traces: usize,
    pub fixed_plaintext: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sliding_window: Option<WindowSection>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            target_byte: 13,
            cpa: true,
            mtd: true,
            tvla: true,
            checkpoints: None,
            first_checkpoint: 10,
            checkpoints_per_decade: 20,
            tvla_traces: 100,
            fixed_plaintext: "00112233445566778899aabbccddeeff".into(),
            sliding_window: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub architecture: Architecture,
    /// Trace budget for CPA and MTD.
    pub n_traces: usize,
    pub key: String,
    pub output_dir: PathBuf,
    /// Keep the per-phase schedule as CSV (large for long runs).
    pub export_schedule: bool,
    pub leakage: LeakageParams,
    pub circuit: CircuitSection,
    pub shuffle: ShuffleSection,
    pub attack: AttackSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            architecture: Architecture::Tvtf,
            n_traces: 2000,
            key: "2b7e151628aed2a6abf7158809cf4f3c".into(),
            output_dir: PathBuf::from("tvtf-out"),
            export_schedule: false,
            leakage: LeakageParams::default(),
            circuit: CircuitSection::default(),
            shuffle: ShuffleSection::default(),
            attack: AttackSection::default(),
        }
    }
}

fn parse_block(field: &str, s: &str) -> Result<Block, Error> {
    parse_hex_block(s.trim())
        .ok_or_else(|| Error::config(field, format!("expected 32 hex digits, got {s:?}")))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::ConfigParse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Sets one field by dotted path (`circuit.v_dd`, `shuffle.m`, ...) from
    /// a TOML literal; bare words are taken as strings.
    pub fn with_override(&self, path: &str, value: &str) -> Result<Self, Error> {
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut root = toml::Value::try_from(self).expect("config is always serializable");
        let mut node = &mut root;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node
                .as_table_mut()
                .ok_or_else(|| Error::config(path, "not a section"))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), parsed);
                break;
            }
            node = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        root.try_into()
            .map_err(|e: toml::de::Error| Error::config(path, e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn key_block(&self) -> Result<Block, Error> {
        parse_block("key", &self.key)
    }

    pub fn fixed_plaintext_block(&self) -> Result<Block, Error> {
        parse_block("attack.fixed_plaintext", &self.attack.fixed_plaintext)
    }

    pub fn circuit_config(&self) -> CircuitConfig {
        self.circuit.resolve(self.leakage.clock_frequency)
    }

    /// Shuffle parameters for `n_traces` traces of `phases_per_trace` phases.
    pub fn shuffle_params(&self, total_phases: usize) -> ShuffleParams {
        ShuffleParams {
            n: self.circuit.capacitor_values().len(),
            m: self.shuffle.m,
            phases_per_cycle: total_phases,
            n_cycles: 1,
        }
    }

    /// Checks every field and their cross-field consistency.
    pub fn validate(&self) -> Result<(), Error> {
        self.key_block()?;
        if self.n_traces < 2 {
            return Err(Error::config("n_traces", format!("need at least 2, got {}", self.n_traces)));
        }
        self.leakage
            .validate()
            .map_err(|e| Error::config("leakage", e.to_string()))?;

        let a = &self.attack;
        if a.target_byte >= BLOCK_BYTES {
            return Err(Error::config(
                "attack.target_byte",
                format!("must be below {BLOCK_BYTES}, got {}", a.target_byte),
            ));
        }
        if a.tvla {
            self.fixed_plaintext_block()?;
            if a.tvla_traces < 2 {
                return Err(Error::config("attack.tvla_traces", "need at least 2 per group"));
            }
        }
        if let Some(cps) = &a.checkpoints {
            if cps.is_empty() || cps.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::config(
                    "attack.checkpoints",
                    "must be non-empty and strictly increasing",
                ));
            }
            if cps[0] < 2 {
                return Err(Error::config("attack.checkpoints", "first checkpoint must be at least 2"));
            }
            if let Some(&last) = cps.last().filter(|&&l| l > self.n_traces) {
                return Err(Error::config(
                    "attack.checkpoints",
                    format!("checkpoint {last} exceeds n_traces = {}", self.n_traces),
                ));
            }
        }
        if a.checkpoints_per_decade == 0 {
            return Err(Error::config("attack.checkpoints_per_decade", "must be at least 1"));
        }
        if let Some(w) = a.sliding_window {
            let ns = self.leakage.samples_per_trace();
            if w.window == 0 || w.stride == 0 || w.window > ns {
                return Err(Error::config(
                    "attack.sliding_window",
                    format!("need 1 <= window <= {ns} and stride >= 1, got window={} stride={}", w.window, w.stride),
                ));
            }
        }

        if self.architecture == Architecture::Unprotected {
            return Ok(());
        }
        let c = &self.circuit;
        let n = c.capacitor_values().len();
        if c.capacitances.is_none()
            && !(c.capacitance_spread.is_finite() && (0.0..1.0).contains(&c.capacitance_spread))
        {
            return Err(Error::config(
                "circuit.capacitance_spread",
                format!("must be in [0, 1), got {}", c.capacitance_spread),
            ));
        }
        let needed = match self.architecture {
            Architecture::TwoPhase => Some(2),
            Architecture::ThreePhaseReset => Some(3),
            _ => None,
        };
        if let Some(k) = needed.filter(|&k| k != n) {
            return Err(Error::config(
                "circuit.n_capacitors",
                format!("{} needs exactly {k} capacitors, got {n}", self.architecture),
            ));
        }
        if !(2..=MAX_CAPACITORS).contains(&n) {
            return Err(Error::config(
                "circuit.n_capacitors",
                format!("must be in 2..={MAX_CAPACITORS}, got {n}"),
            ));
        }
        self.circuit_config().validate().map_err(|e| Error::config("circuit", e.to_string()))?;

        if self.architecture == Architecture::Tvtf {
            let m = self.shuffle.m;
            if m == 0 {
                return Err(Error::config("shuffle.m", "must be at least 1"));
            }
            if n < 2 * m + 1 {
                return Err(Error::config(
                    "shuffle.m",
                    format!("n = {n} capacitors need n >= 2m + 1, so m <= {}; got m = {m}", (n - 1) / 2),
                ));
            }
            let chain = self.shuffle.chain_config()?;
            let built = chain
                .build()
                .map_err(|e| Error::config("shuffle.chain", e.to_string()))?;
            let largest_pool = n.div_ceil(2) as u64;
            if largest_pool > built.output_range() {
                return Err(Error::config(
                    "shuffle.chain",
                    format!(
                        "chain draws values below {}, too few for a pool of {largest_pool} capacitors",
                        built.output_range()
                    ),
                ));
            }
        }
        Ok(())
    }
}
