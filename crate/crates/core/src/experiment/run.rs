//! End-to-end experiment: generate, simulate, attack, report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::attack::{
    compute_mtd, cpa_attack, geometric_checkpoints, integrate_windows, tvla, AttackReport, MtdResult,
    TvlaReport,
};
use crate::circuit::{baseline_schedule, phases_per_trace, simulate_detailed, BaselineArchitecture, Schedule};
use crate::error::Error;
use crate::shuffler::{tvtf_schedule, LfsrChain};
use crate::trace::{
    add_measurement_noise, deinterleave, interleave, synthesize_fixed_trace_set, synthesize_trace_set,
    LeakageParams, TraceSet,
};
use crate::tracefile::write_trace_set;

use super::config::{Architecture, ExperimentConfig};

/// Sub-seed for one consumer of randomness: the first 8 bytes (little
/// endian) of `SHA-256(master.to_le_bytes() || label)`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

// TOML integers are signed 64-bit, so seeds are written as hex strings.
fn hex_u64<S: serde::Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{v:#018x}"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SubSeeds {
    #[serde(serialize_with = "hex_u64")]
    pub plaintexts: u64,
    #[serde(serialize_with = "hex_u64")]
    pub noise: u64,
    #[serde(serialize_with = "hex_u64")]
    pub tvla_fixed: u64,
    #[serde(serialize_with = "hex_u64")]
    pub tvla_random: u64,
    #[serde(serialize_with = "hex_u64")]
    pub tvla_noise: u64,
}

impl SubSeeds {
    pub fn from_master(master: u64) -> Self {
        Self {
            plaintexts: derive_seed(master, "plaintexts"),
            noise: derive_seed(master, "noise"),
            tvla_fixed: derive_seed(master, "tvla-fixed"),
            tvla_random: derive_seed(master, "tvla-random"),
            tvla_noise: derive_seed(master, "tvla-noise"),
        }
    }
}

/// Scalar results of one run, also written as `report.toml`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub architecture: String,
    pub label: String,
    pub n_traces: usize,
    pub target_byte: usize,
    pub true_key_byte: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_guess: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_of_true_key: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_correlation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_sample: Option<usize>,
    /// Trace count, or "not reached".
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mtd: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_abs_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tvla_traces_per_group: Option<usize>,
    /// Deepest capacitor discharge below V_DD, volts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_droop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_rank_of_true_key: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_mtd: Option<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    /// Files written, relative to `output_dir`, in write order.
    pub files: Vec<String>,
    pub seeds: SubSeeds,
    pub summary: RunSummary,
    pub traces: TraceSet,
    pub cpa: Option<AttackReport>,
    pub mtd: Option<MtdResult>,
    pub tvla: Option<TvlaReport>,
    pub window_cpa: Option<AttackReport>,
    pub window_mtd: Option<MtdResult>,
}

/// Everything that decides the output, beyond the config itself.
#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    seeds: &'a SubSeeds,
    resolved: Resolved,
    files: &'a [String],
    config: &'a ExperimentConfig,
}

#[derive(Serialize)]
struct Resolved {
    capacitances: Vec<f64>,
    phase_duration: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    phases_per_trace: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chain: Option<crate::shuffler::ChainConfig>,
    checkpoints: Vec<usize>,
}

/// Drives traces through the configured supply architecture. The TVTF chain
/// is threaded through so later calls continue its sequence.
struct Observer<'a> {
    cfg: &'a ExperimentConfig,
    chain: Option<LfsrChain>,
    phases_per_trace: Option<usize>,
}

struct Observed {
    traces: TraceSet,
    max_droop: Option<f64>,
    schedule: Option<Schedule>,
}

impl<'a> Observer<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self, Error> {
        let chain = match cfg.architecture {
            Architecture::Tvtf => Some(cfg.shuffle.chain_config()?.build()?),
            _ => None,
        };
        Ok(Self {
            cfg,
            chain,
            phases_per_trace: None,
        })
    }

    fn observe(&mut self, load: &TraceSet, label: &str) -> Result<Observed, Error> {
        let cfg = self.cfg;
        if cfg.architecture == Architecture::Unprotected {
            let mut traces = load.clone();
            traces.set_label(label);
            return Ok(Observed {
                traces,
                max_droop: None,
                schedule: None,
            });
        }
        let circuit = cfg.circuit_config();
        let per = phases_per_trace(load, &circuit);
        self.phases_per_trace = Some(per);
        let total = per * load.n_traces();
        let n = circuit.n_capacitors();
        let schedule = match cfg.architecture {
            Architecture::TwoPhase => baseline_schedule(BaselineArchitecture::TwoPhaseNoReset, n, total)?,
            Architecture::ThreePhaseReset => {
                baseline_schedule(BaselineArchitecture::ThreePhaseWithReset, n, total)?
            }
            Architecture::NPhaseRoundRobin => {
                baseline_schedule(BaselineArchitecture::NPhaseRoundRobin, n, total)?
            }
            Architecture::Tvtf => {
                let chain = self.chain.as_mut().expect("tvtf observer has a chain");
                tvtf_schedule(&cfg.shuffle_params(total), chain)?
            }
            Architecture::Unprotected => unreachable!(),
        };
        let sim = simulate_detailed(load, &circuit, &schedule)?;
        let lowest = sim
            .ledgers
            .iter()
            .map(|l| l.min_voltage)
            .fold(f64::INFINITY, f64::min);
        let mut traces = sim.supply;
        traces.set_label(label);
        Ok(Observed {
            traces,
            max_droop: Some(circuit.v_dd - lowest),
            schedule: Some(schedule),
        })
    }
}

fn run_label(cfg: &ExperimentConfig) -> String {
    match cfg.architecture {
        Architecture::Tvtf => format!(
            "tvtf-n{}m{}",
            cfg.circuit.capacitor_values().len(),
            cfg.shuffle.m
        ),
        a => a.name().to_string(),
    }
}

struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self, Error> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.root.join(name)
    }

    fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut std::io::BufWriter<fs::File>) -> std::io::Result<()>,
    ) -> Result<(), Error> {
        let path = self.path(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = std::io::BufWriter::new(file);
        f(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&path, e))
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<(), Error> {
        self.write_with(name, |w| w.write_all(text.as_bytes()))
    }
}

fn mtd_text(r: &MtdResult) -> String {
    r.mtd_display()
}

/// Runs one configured experiment and writes its report bundle to
/// `cfg.output_dir`. Same config, same bytes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, Error> {
    cfg.validate()?;
    let key = cfg.key_block()?;
    let seeds = SubSeeds::from_master(cfg.seed);
    let noiseless = LeakageParams {
        noise_sigma: 0.0,
        ..cfg.leakage.clone()
    };
    let sigma = cfg.leakage.noise_sigma;
    let label = run_label(cfg);
    let byte = cfg.attack.target_byte;
    let mut out = OutDir::create(&cfg.output_dir)?;
    let mut observer = Observer::new(cfg)?;

    let load = synthesize_trace_set(&key, cfg.n_traces, &noiseless, seeds.plaintexts)?;
    let observed = observer.observe(&load, &label)?;
    let traces = add_measurement_noise(&observed.traces, sigma, seeds.noise)?;
    let trace_path = out.path("traces.tvtf");
    write_trace_set(&traces, &trace_path)?;
    if cfg.export_schedule {
        if let Some(s) = &observed.schedule {
            out.write_with("schedule.csv", |w| s.write_csv(w))?;
        }
    }

    let mut summary = RunSummary {
        architecture: cfg.architecture.name().to_string(),
        label: label.clone(),
        n_traces: cfg.n_traces,
        target_byte: byte,
        true_key_byte: key[byte],
        max_droop: observed.max_droop,
        ..Default::default()
    };

    let checkpoints = match &cfg.attack.checkpoints {
        Some(c) => c.clone(),
        None => geometric_checkpoints(
            cfg.attack.first_checkpoint,
            cfg.n_traces,
            cfg.attack.checkpoints_per_decade,
        ),
    };

    let mut cpa = None;
    if cfg.attack.cpa {
        let r = cpa_attack(&traces, byte)?;
        out.write_with("cpa.csv", |w| r.write_csv(w))?;
        summary.best_guess = r.best_guess;
        summary.rank_of_true_key = r.rank_of_true_key;
        if let Some((s, rho)) = r.peak(key[byte]) {
            summary.peak_sample = Some(s);
            summary.peak_correlation = Some(rho);
        }
        cpa = Some(r);
    }
    let mut mtd = None;
    if cfg.attack.mtd {
        let r = compute_mtd(&traces, key[byte], byte, &checkpoints)?;
        out.write_with("mtd.csv", |w| r.write_csv(w))?;
        summary.mtd = Some(mtd_text(&r));
        summary.final_rank = r.rank_at_checkpoint.last().copied();
        mtd = Some(r);
    }

    let (mut window_cpa, mut window_mtd) = (None, None);
    if let Some(w) = cfg.attack.sliding_window {
        let integrated = integrate_windows(&traces, w.window, w.stride)?;
        let r = cpa_attack(&integrated, byte)?;
        out.write_with("window_cpa.csv", |f| r.write_csv(f))?;
        summary.window_rank_of_true_key = r.rank_of_true_key;
        window_cpa = Some(r);
        if cfg.attack.mtd {
            let m = compute_mtd(&integrated, key[byte], byte, &checkpoints)?;
            out.write_with("window_mtd.csv", |f| m.write_csv(f))?;
            summary.window_mtd = Some(mtd_text(&m));
            window_mtd = Some(m);
        }
    }

    let mut tvla_report = None;
    if cfg.attack.tvla {
        let pt = cfg.fixed_plaintext_block()?;
        let n = cfg.attack.tvla_traces;
        let fixed = synthesize_fixed_trace_set(&key, &pt, n, &noiseless, seeds.tvla_fixed)?;
        let random = synthesize_trace_set(&key, n, &noiseless, seeds.tvla_random)?;
        // One interleaved run so both groups see the same supply history.
        let mixed = interleave(&fixed, &random, &label)?;
        let observed = observer.observe(&mixed, &label)?;
        let noisy = add_measurement_noise(&observed.traces, sigma, seeds.tvla_noise)?;
        let (f, r) = deinterleave(&noisy)?;
        let t = tvla(&f, &r)?;
        out.write_with("tvla.csv", |w| t.write_csv(w))?;
        summary.max_abs_t = Some(t.max_abs_t);
        summary.tvla_traces_per_group = Some(t.traces_per_group());
        tvla_report = Some(t);
    }

    let report = toml::to_string(&summary).expect("summary is serializable");
    out.write_text("report.toml", &report)?;

    let circuit = cfg.circuit_config();
    let resolved = Resolved {
        capacitances: circuit.capacitances.clone(),
        phase_duration: circuit.phase_duration(),
        phases_per_trace: observer.phases_per_trace,
        chain: match cfg.architecture {
            Architecture::Tvtf => Some(cfg.shuffle.chain_config()?),
            _ => None,
        },
        checkpoints,
    };
    let mut files = out.files.clone();
    files.push("manifest.toml".into());
    let manifest = Manifest {
        tool: "tvtf",
        version: env!("CARGO_PKG_VERSION"),
        seeds: &seeds,
        resolved,
        files: &files,
        config: cfg,
    };
    let text = toml::to_string(&manifest).expect("manifest is serializable");
    out.write_text("manifest.toml", &text)?;

    Ok(RunOutcome {
        output_dir: out.root,
        files: out.files,
        seeds,
        summary,
        traces,
        cpa,
        mtd,
        tvla: tvla_report,
        window_cpa,
        window_mtd,
    })
}

/// Passes `load` (noiseless AES current) through the configured supply
/// architecture and adds the configured measurement noise.
pub fn simulate_architecture(cfg: &ExperimentConfig, load: &TraceSet) -> Result<TraceSet, Error> {
    cfg.validate()?;
    let seeds = SubSeeds::from_master(cfg.seed);
    let observed = Observer::new(cfg)?.observe(load, &run_label(cfg))?;
    Ok(add_measurement_noise(&observed.traces, cfg.leakage.noise_sigma, seeds.noise)?)
}

/// Hex digest of a file, for reproducibility checks.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String, Error> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_splitting_is_stable_and_label_dependent() {
        // First 8 bytes of SHA-256(01 00 00 00 00 00 00 00 || "noise").
        let expected = {
            let mut h = Sha256::new();
            h.update([1u8, 0, 0, 0, 0, 0, 0, 0]);
            h.update(b"noise");
            let d = h.finalize();
            u64::from_le_bytes(d[..8].try_into().unwrap())
        };
        assert_eq!(derive_seed(1, "noise"), expected);
        assert_ne!(derive_seed(1, "noise"), derive_seed(1, "plaintexts"));
        assert_ne!(derive_seed(1, "noise"), derive_seed(2, "noise"));
        let s = SubSeeds::from_master(7);
        assert_eq!(s, SubSeeds::from_master(7));
    }

    #[test]
    fn labels() {
        let cfg = ExperimentConfig::default();
        assert_eq!(run_label(&cfg), "tvtf-n10m1");
        let u = ExperimentConfig {
            architecture: Architecture::Unprotected,
            ..cfg
        };
        assert_eq!(run_label(&u), "unprotected");
    }
}
