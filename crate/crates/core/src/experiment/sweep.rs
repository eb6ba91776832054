//! One-axis parameter sweeps over the experiment pipeline.

use std::path::Path;

use rayon::prelude::*;

use crate::error::Error;

use super::config::ExperimentConfig;
use super::run::{run_experiment, RunSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    /// Capacitor count, with one phase per capacitor per clock cycle.
    Phases,
    M,
    Periodicity,
    UnitCapacitance,
    CapacitanceSpread,
    /// Phase switching frequency; must be a whole multiple of the clock.
    SwitchingFrequency,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::Phases,
        SweepAxis::M,
        SweepAxis::Periodicity,
        SweepAxis::UnitCapacitance,
        SweepAxis::CapacitanceSpread,
        SweepAxis::SwitchingFrequency,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Phases => "phases",
            SweepAxis::M => "m",
            SweepAxis::Periodicity => "periodicity",
            SweepAxis::UnitCapacitance => "unit_capacitance",
            SweepAxis::CapacitanceSpread => "capacitance_spread",
            SweepAxis::SwitchingFrequency => "switching_frequency",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    fn whole(self, v: f64) -> Result<u64, Error> {
        if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 {
            Ok(v as u64)
        } else {
            Err(Error::config(self.name(), format!("expected a whole number, got {v}")))
        }
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, Error> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Phases => {
                let n = self.whole(value)? as usize;
                cfg.circuit.n_capacitors = n;
                cfg.circuit.phases_per_cycle = n;
                cfg.circuit.capacitances = None;
            }
            SweepAxis::M => cfg.shuffle.m = self.whole(value)? as usize,
            SweepAxis::Periodicity => {
                cfg.shuffle.period = self.whole(value)?;
                cfg.shuffle.chain = None;
            }
            SweepAxis::UnitCapacitance => {
                cfg.circuit.unit_capacitance = value;
                cfg.circuit.capacitances = None;
            }
            SweepAxis::CapacitanceSpread => {
                cfg.circuit.capacitance_spread = value;
                cfg.circuit.capacitances = None;
            }
            SweepAxis::SwitchingFrequency => {
                let ratio = value / cfg.leakage.clock_frequency;
                let k = ratio.round();
                if !(k >= 1.0 && (ratio - k).abs() <= 1e-9 * k) {
                    return Err(Error::config(
                        "switching_frequency",
                        format!(
                            "{value} Hz is not a whole multiple of the {} Hz clock",
                            cfg.leakage.clock_frequency
                        ),
                    ));
                }
                cfg.circuit.phases_per_cycle = k as usize;
            }
        }
        cfg.output_dir = base.output_dir.join(format!("{}-{}", self.name(), value));
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: f64,
    pub result: Result<RunSummary, String>,
}

impl SweepRow {
    pub fn mtd(&self) -> Option<&str> {
        self.result.as_ref().ok().and_then(|s| s.mtd.as_deref())
    }

    /// MTD as a trace count, `None` for errors or "not reached".
    pub fn mtd_traces(&self) -> Option<usize> {
        self.mtd().and_then(|m| m.parse().ok())
    }
}

#[derive(Clone, Debug)]
pub struct SweepSummary {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl SweepSummary {
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "{},status,mtd,final_rank,max_abs_t,max_droop,error", self.axis.name())?;
        for row in &self.rows {
            match &row.result {
                Ok(s) => writeln!(
                    w,
                    "{},ok,{},{},{},{},",
                    row.value,
                    opt(s.mtd.as_deref()),
                    opt(s.final_rank),
                    opt(s.max_abs_t),
                    opt(s.max_droop)
                )?,
                Err(e) => writeln!(w, "{},error,,,,,{}", row.value, csv_field(e))?,
            }
        }
        Ok(())
    }
}

/// Runs every point (in parallel) and writes `sweep_<axis>.csv` under the
/// base output directory, rows in the order given. A failing point becomes
/// an error row.
pub fn sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepSummary, Error> {
    if values.is_empty() {
        return Err(Error::config("sweep.values", "need at least one value"));
    }
    let rows = values
        .par_iter()
        .map(|&value| SweepRow {
            value,
            result: axis
                .apply(base, value)
                .and_then(|cfg| run_experiment(&cfg))
                .map(|o| o.summary)
                .map_err(|e| e.to_string()),
        })
        .collect();
    let summary = SweepSummary { axis, rows };
    let dir: &Path = &base.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("sweep_{}.csv", axis.name()));
    let mut buf = Vec::new();
    summary.write_csv(&mut buf).expect("writing to memory");
    std::fs::write(&path, buf).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_application() {
        let base = ExperimentConfig::default();
        let c = SweepAxis::Phases.apply(&base, 6.0).unwrap();
        assert_eq!((c.circuit.n_capacitors, c.circuit.phases_per_cycle), (6, 6));
        let c = SweepAxis::SwitchingFrequency.apply(&base, 2.5e9).unwrap();
        assert_eq!(c.circuit.phases_per_cycle, 20);
        assert!(SweepAxis::SwitchingFrequency.apply(&base, 1.3e9).is_err());
        assert!(SweepAxis::M.apply(&base, 1.5).is_err());
        let c = SweepAxis::CapacitanceSpread.apply(&base, 0.2).unwrap();
        let caps = c.circuit.capacitor_values();
        assert!((caps.iter().sum::<f64>() - 200e-12).abs() < 1e-22);
        assert!((caps[0] - 16e-12).abs() < 1e-22 && (caps[9] - 24e-12).abs() < 1e-22);
        assert!(c.output_dir.ends_with("capacitance_spread-0.2"));
        for a in SweepAxis::ALL {
            assert_eq!(SweepAxis::parse(a.name()), Some(a));
        }
    }

    #[test]
    fn error_rows_are_quoted() {
        let s = SweepSummary {
            axis: SweepAxis::M,
            rows: vec![SweepRow {
                value: 9.0,
                result: Err("bad, \"very\"".into()),
            }],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1), Some("9,error,,,,,\"bad, \"\"very\"\"\""));
    }
}
