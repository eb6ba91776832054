use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tvtf_core::attack::{
    compute_mtd, cpa_attack, geometric_checkpoints, sliding_window_cpa, tvla, TVLA_THRESHOLD,
};
use tvtf_core::experiment::{
    run_experiment, simulate_architecture, sweep, ExperimentConfig, SubSeeds, SweepAxis,
};
use tvtf_core::overhead::{overhead_report, OverheadParams};
use tvtf_core::shuffler::{p_leak, p_leak_exact, p_leak_monte_carlo, standard_error};
use tvtf_core::trace::{synthesize_fixed_trace_set, synthesize_trace_set};
use tvtf_core::tracefile::{
    decode, export_csv, hex_block, parse_csv, parse_hex_block, write_trace_set, MAGIC,
};
use tvtf_core::{Error, TraceSet};

/// Side-channel lab for capacitor-array supply isolation.
#[derive(Parser)]
#[command(name = "tvtf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: synthesize, simulate, attack and write a report bundle.
    Run(ConfigArgs),
    /// Synthesize AES power traces (the unprotected measurement).
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        output: PathBuf,
        /// Use the configured fixed plaintext for every trace.
        #[arg(long)]
        fixed: bool,
        /// Ignore the configured noise and write the bare load current.
        #[arg(long)]
        noiseless: bool,
    },
    /// Pass a load-current trace file through the configured supply architecture.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Correlation power analysis on one key byte.
    Attack {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, default_value_t = 13)]
        byte: usize,
        /// Integrate this many samples per point before attacking.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long, default_value_t = 1, requires = "window")]
        stride: usize,
        /// Write the full correlation matrix here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Measurements to disclosure over a checkpoint grid.
    Mtd {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(long, default_value_t = 13)]
        byte: usize,
        /// Correct key as 32 hex digits; defaults to the key stored in the file.
        #[arg(long)]
        key: Option<String>,
        /// Explicit trace counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        first_checkpoint: usize,
        #[arg(long, default_value_t = 20)]
        checkpoints_per_decade: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Fixed-vs-random Welch t-test.
    Tvla {
        #[arg(long)]
        fixed: PathBuf,
        #[arg(long)]
        random: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// One run per value along an axis, summarised as CSV.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// phases, m, periodicity, unit_capacitance, capacitance_spread or
        /// switching_frequency.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Probability that a fresh charging set overlaps the previous one.
    Pleak {
        #[arg(short)]
        n: u64,
        #[arg(short)]
        m: u64,
        /// Also estimate it by sampling this many draws.
        #[arg(long, default_value_t = 0)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Power and area cost estimate.
    Overhead(OverheadArgs),
    /// Check an external trace file (binary or CSV) and store it in the binary format.
    Import {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Sample period in seconds; required for CSV input.
        #[arg(long)]
        sample_period: Option<f64>,
        /// Key as 32 hex digits, stored with the traces.
        #[arg(long)]
        key: Option<String>,
        #[arg(long)]
        label: Option<String>,
    },
    /// Write a binary trace file as CSV.
    ExportCsv {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    architecture: Option<String>,
    #[arg(long)]
    n_traces: Option<usize>,
    #[arg(long)]
    key: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    n_capacitors: Option<usize>,
    #[arg(long)]
    unit_capacitance: Option<f64>,
    #[arg(long)]
    capacitance_spread: Option<f64>,
    #[arg(long)]
    phases_per_cycle: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    period: Option<u64>,
    #[arg(long)]
    target_byte: Option<usize>,
    #[arg(long)]
    tvla_traces: Option<usize>,
    #[arg(long)]
    export_schedule: bool,
    /// Any other field, as section.field=value (TOML literal).
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let quoted = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
        let mut overrides: Vec<(&str, String)> = Vec::new();
        let mut push = |path, v: Option<String>| {
            if let Some(v) = v {
                overrides.push((path, v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("architecture", self.architecture.as_deref().map(quoted));
        push("n_traces", self.n_traces.map(|v| v.to_string()));
        push("key", self.key.as_deref().map(quoted));
        push(
            "output_dir",
            self.output_dir.as_ref().map(|p| quoted(&p.to_string_lossy())),
        );
        push("leakage.noise_sigma", self.noise_sigma.map(float));
        push("circuit.n_capacitors", self.n_capacitors.map(|v| v.to_string()));
        push("circuit.unit_capacitance", self.unit_capacitance.map(float));
        push("circuit.capacitance_spread", self.capacitance_spread.map(float));
        push("circuit.phases_per_cycle", self.phases_per_cycle.map(|v| v.to_string()));
        push("shuffle.m", self.m.map(|v| v.to_string()));
        push("shuffle.period", self.period.map(|v| v.to_string()));
        push("attack.target_byte", self.target_byte.map(|v| v.to_string()));
        push("attack.tvla_traces", self.tvla_traces.map(|v| v.to_string()));
        if self.export_schedule {
            push("export_schedule", Some("true".into()));
        }
        for (path, value) in overrides {
            cfg = cfg.with_override(path, &value)?;
        }
        for item in &self.set {
            let (path, value) = item
                .split_once('=')
                .ok_or_else(|| Error::config(item.as_str(), "expected PATH=VALUE"))?;
            cfg = cfg.with_override(path.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

// TOML needs a decimal point or exponent to read a float.
fn float(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Args)]
struct OverheadArgs {
    #[arg(long)]
    switching_frequency: Option<f64>,
    #[arg(long)]
    unit_capacitance: Option<f64>,
    #[arg(long)]
    max_droop: Option<f64>,
    #[arg(long)]
    gate_capacitance: Option<f64>,
    #[arg(long)]
    v_dd: Option<f64>,
    #[arg(long)]
    prng_power: Option<f64>,
    #[arg(long)]
    aes_power: Option<f64>,
    #[arg(long)]
    aes_area: Option<f64>,
    #[arg(long)]
    cap_area: Option<f64>,
    #[arg(long)]
    prng_area: Option<f64>,
    #[arg(long)]
    switch_area: Option<f64>,
}

impl OverheadArgs {
    fn params(&self) -> OverheadParams {
        let mut p = OverheadParams::default();
        let fields = [
            (self.switching_frequency, &mut p.switching_frequency),
            (self.unit_capacitance, &mut p.unit_capacitance),
            (self.max_droop, &mut p.max_droop),
            (self.gate_capacitance, &mut p.gate_capacitance_per_switch),
            (self.v_dd, &mut p.v_dd),
            (self.prng_power, &mut p.prng_power),
            (self.aes_power, &mut p.aes_power),
            (self.aes_area, &mut p.aes_area),
            (self.cap_area, &mut p.cap_area),
            (self.prng_area, &mut p.prng_area),
            (self.switch_area, &mut p.switch_area),
        ];
        for (value, slot) in fields {
            if let Some(v) = value {
                *slot = v;
            }
        }
        p
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let mut msg = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let s_text = s.to_string();
                if !msg.contains(&s_text) {
                    msg.push_str(": ");
                    msg.push_str(&s_text);
                }
                source = s.source();
            }
            eprintln!("tvtf: {} error: {msg}", class.name());
            ExitCode::from(class.exit_code() as u8)
        }
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run(args) => {
            let cfg = args.resolve()?;
            let outcome = run_experiment(&cfg)?;
            let s = &outcome.summary;
            println!("output_dir={}", outcome.output_dir.display());
            println!("architecture={}", s.label);
            println!("n_traces={}", s.n_traces);
            if let Some(g) = s.best_guess {
                println!("best_guess={g:#04x}");
            }
            if let Some(r) = s.rank_of_true_key {
                println!("rank_of_true_key={r}");
            }
            println!("mtd={}", s.mtd.as_deref().unwrap_or("not computed"));
            if let Some(t) = s.max_abs_t {
                println!("max_abs_t={t:.3}");
            }
            if let Some(d) = s.max_droop {
                println!("max_droop={d:.6}");
            }
            println!("files={}", outcome.files.len());
        }
        Command::Generate {
            cfg,
            output,
            fixed,
            noiseless,
        } => {
            let cfg = cfg.resolve()?;
            let mut params = cfg.leakage.clone();
            if noiseless {
                params.noise_sigma = 0.0;
            }
            let key = cfg.key_block()?;
            let seeds = SubSeeds::from_master(cfg.seed);
            let ts = if fixed {
                let pt = cfg.fixed_plaintext_block()?;
                synthesize_fixed_trace_set(&key, &pt, cfg.n_traces, &params, seeds.tvla_fixed)?
            } else {
                synthesize_trace_set(&key, cfg.n_traces, &params, seeds.plaintexts)?
            };
            write_trace_set(&ts, &output)?;
            describe(&ts, &output);
        }
        Command::Simulate { cfg, input, output } => {
            let cfg = cfg.resolve()?;
            let load = read(&input)?;
            let ts = simulate_architecture(&cfg, &load)?;
            write_trace_set(&ts, &output)?;
            describe(&ts, &output);
        }
        Command::Attack {
            input,
            byte,
            window,
            stride,
            csv,
        } => {
            let ts = read(&input)?;
            let report = match window {
                Some(w) => sliding_window_cpa(&ts, w, stride, byte)?,
                None => cpa_attack(&ts, byte)?,
            };
            let true_key = ts.key().map(|k| k[byte]);
            println!("target_byte={byte}");
            println!("traces={}", report.traces_used);
            match report.best_guess {
                Some(g) => {
                    println!("best_guess={g:#04x}");
                    if let Some((sample, rho)) = report.peak(g) {
                        println!("peak_sample={sample}");
                        println!("peak_correlation={rho:.6}");
                    }
                }
                None => println!("best_guess=undefined"),
            }
            if let Some(k) = true_key {
                println!("true_key={k:#04x}");
                println!("rank_of_true_key={}", report.rank_of(k));
            }
            if let Some(path) = csv {
                write_with(&path, |w| report.write_csv(w))?;
            }
        }
        Command::Mtd {
            input,
            byte,
            key,
            checkpoints,
            first_checkpoint,
            checkpoints_per_decade,
            csv,
        } => {
            let ts = read(&input)?;
            let key = match key {
                Some(k) => parse_key(&k)?,
                None => *ts
                    .key()
                    .ok_or_else(|| Error::config("key", "trace file stores no key; pass --key"))?,
            };
            if byte >= 16 {
                return Err(Error::config("byte", "must be below 16"));
            }
            let checkpoints = if checkpoints.is_empty() {
                if first_checkpoint < 2 || checkpoints_per_decade == 0 {
                    return Err(Error::config(
                        "checkpoints",
                        "first checkpoint must be at least 2 and per-decade count positive",
                    ));
                }
                geometric_checkpoints(first_checkpoint, ts.n_traces(), checkpoints_per_decade)
            } else {
                checkpoints
            };
            let result = compute_mtd(&ts, key[byte], byte, &checkpoints)?;
            println!("target_byte={byte}");
            println!("mtd={}", result.mtd_display());
            if let Some(rank) = result.rank_at_checkpoint.last() {
                println!("final_rank={rank}");
            }
            if let Some(path) = csv {
                write_with(&path, |w| result.write_csv(w))?;
            }
        }
        Command::Tvla { fixed, random, csv } => {
            let report = tvla(&read(&fixed)?, &read(&random)?)?;
            println!("traces_per_group={}", report.traces_per_group());
            println!("max_abs_t={:.3}", report.max_abs_t);
            println!("threshold={TVLA_THRESHOLD}");
            println!("leaks={}", report.leaks());
            if let Some(path) = csv {
                write_with(&path, |w| report.write_csv(w))?;
            }
        }
        Command::Sweep { cfg, axis, values } => {
            let cfg = cfg.resolve()?;
            let axis = SweepAxis::parse(&axis)
                .ok_or_else(|| Error::config("axis", format!("unknown sweep axis {axis:?}")))?;
            let summary = sweep(&cfg, axis, &values)?;
            let stdout = std::io::stdout();
            summary
                .write_csv(stdout.lock())
                .map_err(|e| Error::io("<stdout>", e))?;
        }
        Command::Pleak { n, m, trials, seed } => {
            if m == 0 || n < m {
                return Err(Error::config("n", format!("need n >= m >= 1 (n={n}, m={m})")));
            }
            let exact = p_leak_exact(n, m);
            let p = p_leak(n, m);
            println!("n={n}");
            println!("m={m}");
            println!("p_leak={}/{}", exact.numer(), exact.denom());
            println!("p_leak_float={p:.6}");
            if trials > 0 {
                let est = p_leak_monte_carlo(n, m, trials, seed);
                println!("monte_carlo={est:.6}");
                println!("standard_error={:.6}", standard_error(p, trials));
            }
        }
        Command::Overhead(args) => {
            print!("{}", overhead_report(&args.params())?);
        }
        Command::Import {
            input,
            output,
            sample_period,
            key,
            label,
        } => {
            let bytes = std::fs::read(&input).map_err(|e| Error::io(&input, e))?;
            let mut ts = if bytes.starts_with(&MAGIC) {
                if sample_period.is_some() || key.is_some() {
                    return Err(Error::config(
                        "sample_period",
                        "binary files carry their own timing and key",
                    ));
                }
                decode(&bytes)?
            } else {
                let period = sample_period.ok_or_else(|| {
                    Error::config("sample_period", "required when importing CSV")
                })?;
                let key = key.as_deref().map(parse_key).transpose()?;
                let text = String::from_utf8_lossy(&bytes);
                parse_csv(&text, period, key, "imported")?
            };
            if let Some(l) = label {
                ts.set_label(l);
            }
            write_trace_set(&ts, &output)?;
            describe(&ts, &output);
        }
        Command::ExportCsv { input, output } => {
            let ts = read(&input)?;
            export_csv(&ts, &output)?;
            println!("wrote {} traces to {}", ts.n_traces(), output.display());
        }
    }
    Ok(())
}

fn read(path: &Path) -> Result<TraceSet, Error> {
    Ok(tvtf_core::tracefile::read_trace_set(path)?)
}

fn parse_key(s: &str) -> Result<[u8; 16], Error> {
    parse_hex_block(s).ok_or_else(|| Error::config("key", "expected 32 hex digits"))
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), Error> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn describe(ts: &TraceSet, path: &Path) {
    println!("wrote {}", path.display());
    println!("label={}", ts.label());
    println!("traces={}", ts.n_traces());
    println!("samples={}", ts.n_samples());
    println!("sample_period={:e}", ts.sample_period());
    if let Some(k) = ts.key() {
        println!("key={}", hex_block(k));
    }
}
