//! Switched-capacitor supply network between the supply rail and the AES
//! load.
//!
//! Every phase each capacitor has at most one role: charging from the supply
//! through its switch, driving the load, being reset on a separate rail, or
//! idling. The load current is replayed from an input trace (it does not
//! depend on the capacitor voltage); the attacker sees only the current drawn
//! from the supply.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CircuitError;
use crate::trace::TraceSet;

/// Largest capacitor array a [`Schedule`] can address.
pub const MAX_CAPACITORS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitConfig {
    pub v_dd: f64,
    pub capacitances: Vec<f64>,
    pub switch_resistance: f64,
    pub phases_per_cycle: usize,
    pub clock_frequency: f64,
    pub integration_substeps: usize,
    /// Voltage the reset rail restores a capacitor to; `v_dd / 2` when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reset_voltage: Option<f64>,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self {
            v_dd: 1.2,
            capacitances: vec![20e-12; 10],
            switch_resistance: 10.0,
            phases_per_cycle: 10,
            clock_frequency: 125e6,
            integration_substeps: 16,
            reset_voltage: None,
        }
    }
}

impl CircuitConfig {
    pub fn n_capacitors(&self) -> usize {
        self.capacitances.len()
    }

    pub fn phase_duration(&self) -> f64 {
        1.0 / (self.clock_frequency * self.phases_per_cycle as f64)
    }

    pub fn switching_frequency(&self) -> f64 {
        self.clock_frequency * self.phases_per_cycle as f64
    }

    pub fn reset_voltage(&self) -> f64 {
        self.reset_voltage.unwrap_or(self.v_dd / 2.0)
    }

    pub fn min_capacitance(&self) -> f64 {
        self.capacitances.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn total_capacitance(&self) -> f64 {
        self.capacitances.iter().sum()
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        let bad = |m: String| Err(CircuitError::InvalidConfig(m));
        if !(self.v_dd.is_finite() && self.v_dd > 0.0) {
            return bad(format!("v_dd must be positive, got {}", self.v_dd));
        }
        if self.capacitances.is_empty() || self.capacitances.len() > MAX_CAPACITORS {
            return bad(format!(
                "need 1..={MAX_CAPACITORS} capacitors, got {}",
                self.capacitances.len()
            ));
        }
        if let Some(c) = self.capacitances.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return bad(format!("capacitances must be positive, got {c}"));
        }
        if !(self.switch_resistance.is_finite() && self.switch_resistance > 0.0) {
            return bad(format!(
                "switch_resistance must be positive, got {}",
                self.switch_resistance
            ));
        }
        if self.phases_per_cycle == 0 {
            return bad("phases_per_cycle must be at least 1".into());
        }
        if !(self.clock_frequency.is_finite() && self.clock_frequency > 0.0) {
            return bad(format!(
                "clock_frequency must be positive, got {}",
                self.clock_frequency
            ));
        }
        if self.integration_substeps == 0 {
            return bad("integration_substeps must be at least 1".into());
        }
        let vr = self.reset_voltage();
        if !(0.0..=self.v_dd).contains(&vr) {
            return bad(format!("reset_voltage {vr} outside [0, v_dd]"));
        }
        Ok(())
    }
}

/// Capacitors with the same nominal value `unit`, spread linearly by
/// `±spread` (fraction) around it. The total stays `n * unit`.
pub fn spread_capacitances(n: usize, unit: f64, spread: f64) -> Vec<f64> {
    if n == 1 {
        return vec![unit];
    }
    (0..n)
        .map(|i| {
            let x = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            unit * (1.0 + spread * x)
        })
        .collect()
}

/// Residue voltage after a capacitor has supplied `segment` (current samples
/// spaced `spacing` seconds apart) starting from `v_start`.
pub fn residue_voltage(
    v_start: f64,
    c: f64,
    segment: &[f64],
    spacing: f64,
) -> Result<f64, CircuitError> {
    if c.is_nan() || c <= 0.0 {
        return Err(CircuitError::InvalidArgument(format!(
            "capacitance must be positive, got {c}"
        )));
    }
    if segment.iter().any(|v| !v.is_finite()) || !spacing.is_finite() || spacing < 0.0 {
        return Err(CircuitError::InvalidArgument(
            "current segment must be finite".into(),
        ));
    }
    let charge: f64 = segment
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]) * spacing)
        .sum();
    Ok(v_start - charge / c)
}

/// Current through the switch `t` seconds after a capacitor at `v_res` is
/// connected to the supply.
pub fn charge_current(v_res: f64, v_dd: f64, r: f64, c: f64, t: f64) -> Result<f64, CircuitError> {
    if t < 0.0 {
        return Err(CircuitError::InvalidArgument(format!(
            "time must be non-negative, got {t}"
        )));
    }
    if !(r > 0.0 && c > 0.0) {
        return Err(CircuitError::InvalidArgument(
            "resistance and capacitance must be positive".into(),
        ));
    }
    if v_res > v_dd {
        return Err(CircuitError::InvalidArgument(format!(
            "residue {v_res} V above supply {v_dd} V"
        )));
    }
    Ok((v_dd - v_res) / r * (-t / (r * c)).exp())
}

/// Worst-case single-phase droop on the smallest capacitor.
pub fn max_droop(
    cfg: &CircuitConfig,
    worst_case_current: f64,
    phase_duration: f64,
) -> Result<f64, CircuitError> {
    if worst_case_current < 0.0 || phase_duration.is_nan() || phase_duration <= 0.0 {
        return Err(CircuitError::InvalidArgument(
            "current must be >= 0 and phase duration > 0".into(),
        ));
    }
    let c = cfg.min_capacitance();
    if !(c > 0.0 && c.is_finite()) {
        return Err(CircuitError::InvalidConfig("no positive capacitance".into()));
    }
    Ok(worst_case_current * phase_duration / c)
}

/// Bit set of capacitor indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct CapSet(u64);

impl CapSet {
    pub const EMPTY: CapSet = CapSet(0);

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut s = CapSet::EMPTY;
        for i in indices {
            s.insert(i);
        }
        s
    }

    pub fn insert(&mut self, i: usize) {
        assert!(i < MAX_CAPACITORS, "capacitor index {i} out of range");
        self.0 |= 1 << i;
    }

    pub fn contains(&self, i: usize) -> bool {
        i < MAX_CAPACITORS && self.0 & (1 << i) != 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn intersects(&self, other: CapSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(&self, other: CapSet) -> CapSet {
        CapSet(self.0 | other.0)
    }

    pub fn bits(&self) -> u64 {
        self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> {
        let bits = self.0;
        (0..MAX_CAPACITORS).filter(move |i| bits & (1 << i) != 0)
    }
}

impl std::fmt::Display for CapSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Role assignment for one phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseRoles {
    pub charging: CapSet,
    pub driving: CapSet,
    pub reset: CapSet,
}

impl PhaseRoles {
    pub fn new(charging: CapSet, driving: CapSet) -> Self {
        Self {
            charging,
            driving,
            reset: CapSet::EMPTY,
        }
    }
}

/// Per-phase capacitor roles for a whole simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    n_capacitors: usize,
    phases: Vec<PhaseRoles>,
}

impl Schedule {
    pub fn new(n_capacitors: usize, phases: Vec<PhaseRoles>) -> Result<Self, CircuitError> {
        let s = Self {
            n_capacitors,
            phases,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CircuitError> {
        if self.n_capacitors == 0 || self.n_capacitors > MAX_CAPACITORS {
            return Err(CircuitError::InvalidSchedule(format!(
                "capacitor count {} outside 1..={MAX_CAPACITORS}",
                self.n_capacitors
            )));
        }
        let limit = if self.n_capacitors == MAX_CAPACITORS {
            u64::MAX
        } else {
            (1u64 << self.n_capacitors) - 1
        };
        for (p, r) in self.phases.iter().enumerate() {
            if r.charging.intersects(r.driving)
                || r.charging.intersects(r.reset)
                || r.driving.intersects(r.reset)
            {
                return Err(CircuitError::InvalidSchedule(format!(
                    "phase {p}: a capacitor holds two roles"
                )));
            }
            if r.charging.union(r.driving).union(r.reset).bits() & !limit != 0 {
                return Err(CircuitError::InvalidSchedule(format!(
                    "phase {p}: capacitor index beyond {}",
                    self.n_capacitors
                )));
            }
        }
        Ok(())
    }

    pub fn n_capacitors(&self) -> usize {
        self.n_capacitors
    }

    pub fn n_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn phases(&self) -> &[PhaseRoles] {
        &self.phases
    }

    pub fn phase(&self, i: usize) -> &PhaseRoles {
        &self.phases[i]
    }

    /// Audit CSV: `phase,charging,driving,reset` with space-separated indices.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "phase,charging,driving,reset")?;
        for (p, r) in self.phases.iter().enumerate() {
            writeln!(w, "{p},{},{},{}", r.charging, r.driving, r.reset)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineArchitecture {
    TwoPhaseNoReset,
    ThreePhaseWithReset,
    NPhaseRoundRobin,
}

impl BaselineArchitecture {
    fn name(self) -> &'static str {
        match self {
            BaselineArchitecture::TwoPhaseNoReset => "two_phase_no_reset",
            BaselineArchitecture::ThreePhaseWithReset => "three_phase_with_reset",
            BaselineArchitecture::NPhaseRoundRobin => "n_phase_round_robin",
        }
    }
}

fn caps(ix: &[usize]) -> CapSet {
    CapSet::from_indices(ix.iter().copied())
}

/// Adds reset roles to a cyclic pattern: a capacitor that idles in a phase
/// and whose most recent role was driving is reset during that phase.
fn with_idle_resets(mut pattern: Vec<PhaseRoles>, n_caps: usize) -> Vec<PhaseRoles> {
    let len = pattern.len();
    for p in 0..len {
        let busy = pattern[p].charging.union(pattern[p].driving);
        for c in (0..n_caps).filter(|&c| !busy.contains(c)) {
            let last = (1..=len)
                .map(|back| &pattern[(p + len - back) % len])
                .find(|r| r.charging.contains(c) || r.driving.contains(c));
            if matches!(last, Some(r) if r.driving.contains(c)) {
                pattern[p].reset.insert(c);
            }
        }
    }
    pattern
}

/// Deterministic periodic schedules for the reference architectures.
pub fn baseline_schedule(
    arch: BaselineArchitecture,
    n_capacitors: usize,
    n_phases_total: usize,
) -> Result<Schedule, CircuitError> {
    let pattern = match arch {
        BaselineArchitecture::TwoPhaseNoReset => {
            if n_capacitors != 2 {
                return Err(CircuitError::UnsupportedCapacitorCount {
                    architecture: arch.name(),
                    needed: "exactly 2".into(),
                    got: n_capacitors,
                });
            }
            vec![
                PhaseRoles::new(caps(&[0]), caps(&[1])),
                PhaseRoles::new(caps(&[1]), caps(&[0])),
            ]
        }
        BaselineArchitecture::ThreePhaseWithReset => {
            if n_capacitors != 3 {
                return Err(CircuitError::UnsupportedCapacitorCount {
                    architecture: arch.name(),
                    needed: "exactly 3".into(),
                    got: n_capacitors,
                });
            }
            let table = vec![
                PhaseRoles::new(caps(&[0, 1]), caps(&[2])),
                PhaseRoles::new(caps(&[]), caps(&[0])),
                PhaseRoles::new(caps(&[0, 2]), caps(&[1])),
                PhaseRoles::new(caps(&[]), caps(&[2])),
                PhaseRoles::new(caps(&[1, 2]), caps(&[0])),
                PhaseRoles::new(caps(&[]), caps(&[1])),
            ];
            with_idle_resets(table, 3)
        }
        BaselineArchitecture::NPhaseRoundRobin => {
            if !(2..=MAX_CAPACITORS).contains(&n_capacitors) {
                return Err(CircuitError::UnsupportedCapacitorCount {
                    architecture: arch.name(),
                    needed: format!("2..={MAX_CAPACITORS}"),
                    got: n_capacitors,
                });
            }
            (0..n_capacitors)
                .map(|k| {
                    PhaseRoles::new(
                        caps(&[(k + n_capacitors - 1) % n_capacitors]),
                        caps(&[k]),
                    )
                })
                .collect()
        }
    };
    let phases = pattern.iter().cycle().take(n_phases_total).copied().collect();
    Schedule::new(n_capacitors, phases)
}

/// Charge bookkeeping for one simulated trace, in coulombs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChargeLedger {
    pub supply_in: f64,
    pub load_out: f64,
    /// Charge the reset rail absorbed from the capacitors.
    pub reset_rail: f64,
    pub initial_voltages: Vec<f64>,
    pub final_voltages: Vec<f64>,
    pub min_voltage: f64,
    pub max_voltage: f64,
}

impl ChargeLedger {
    pub fn stored_delta(&self, capacitances: &[f64]) -> f64 {
        self.final_voltages
            .iter()
            .zip(&self.initial_voltages)
            .zip(capacitances)
            .map(|((vf, vi), c)| c * (vf - vi))
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct SupplySimulation {
    pub supply: TraceSet,
    pub ledgers: Vec<ChargeLedger>,
    pub phases_per_trace: usize,
}

/// Phases needed to cover one trace of `aes`.
pub fn phases_per_trace(aes: &TraceSet, cfg: &CircuitConfig) -> usize {
    let duration = aes.n_samples() as f64 * aes.sample_period();
    let ratio = duration / cfg.phase_duration();
    // Absorb rounding in the ratio before taking the ceiling.
    (ratio - 1e-9).ceil().max(1.0) as usize
}

/// Piecewise-linear load current through the trace's sample points, held
/// after the last sample.
struct LoadCurrent<'a> {
    samples: &'a [f32],
    dt: f64,
}

impl LoadCurrent<'_> {
    fn at(&self, t: f64) -> f64 {
        let x = t / self.dt;
        let last = self.samples.len() - 1;
        if x <= 0.0 {
            return self.samples[0] as f64;
        }
        let k = x.floor() as usize;
        if k >= last {
            return self.samples[last] as f64;
        }
        let f = x - k as f64;
        let (a, b) = (self.samples[k] as f64, self.samples[k + 1] as f64);
        a + (b - a) * f
    }
}

/// Spreads `q` uniformly over `[a, b)` into bins of width `dt`.
fn deposit(bins: &mut [f64], dt: f64, a: f64, b: f64, q: f64) {
    if q == 0.0 || b <= a {
        return;
    }
    let n = bins.len();
    let mut k = ((a / dt).floor() as usize).min(n - 1);
    let mut left = a;
    while left < b && k < n {
        let edge = if k == n - 1 { b } else { ((k + 1) as f64 * dt).min(b) };
        if edge > left {
            bins[k] += q * (edge - left) / (b - a);
        }
        left = edge;
        k += 1;
    }
}

fn simulate_one(
    load: LoadCurrent<'_>,
    n_samples: usize,
    cfg: &CircuitConfig,
    phases: &[PhaseRoles],
    first_phase: usize,
) -> Result<(Vec<f64>, ChargeLedger), CircuitError> {
    let dt = load.dt;
    let duration = n_samples as f64 * dt;
    let tph = cfg.phase_duration();
    let v_dd = cfg.v_dd;
    let v_reset = cfg.reset_voltage();
    let r = cfg.switch_resistance;
    let caps = &cfg.capacitances;
    let decay_per_substep: Vec<f64> = caps
        .iter()
        .map(|c| (-(tph / cfg.integration_substeps as f64) / (r * c)).exp())
        .collect();

    let mut v = vec![v_dd; caps.len()];
    let mut bins = vec![0f64; n_samples];
    let mut ledger = ChargeLedger {
        initial_voltages: v.clone(),
        min_voltage: v_dd,
        max_voltage: v_dd,
        ..Default::default()
    };

    for (p, roles) in phases.iter().enumerate() {
        let global = first_phase + p;
        let t0 = p as f64 * tph;
        if t0 >= duration {
            break;
        }
        if roles.driving.is_empty() {
            return Err(CircuitError::UnpoweredPhase { phase: global });
        }
        for c in roles.reset.iter() {
            ledger.reset_rail += caps[c] * (v[c] - v_reset);
            v[c] = v_reset;
        }
        let t1 = ((p + 1) as f64 * tph).min(duration);
        let full = t1 == (p + 1) as f64 * tph;
        let h = (t1 - t0) / cfg.integration_substeps as f64;
        let n_drivers = roles.driving.len() as f64;
        let mut i_prev = load.at(t0);
        for s in 0..cfg.integration_substeps {
            let a = t0 + s as f64 * h;
            let b = if s + 1 == cfg.integration_substeps { t1 } else { a + h };
            let i_next = load.at(b);
            let q_load = 0.5 * (i_prev + i_next) * (b - a);
            i_prev = i_next;
            ledger.load_out += q_load;
            let share = q_load / n_drivers;
            for d in roles.driving.iter() {
                v[d] -= share / caps[d];
                if v[d] < 0.0 {
                    return Err(CircuitError::Brownout {
                        capacitor: d,
                        phase: global,
                        voltage: v[d],
                    });
                }
                ledger.min_voltage = ledger.min_voltage.min(v[d]);
            }
            let mut q_supply = 0.0;
            for c in roles.charging.iter() {
                let decay = if full {
                    decay_per_substep[c]
                } else {
                    (-(b - a) / (r * caps[c])).exp()
                };
                let nv = v_dd - (v_dd - v[c]) * decay;
                q_supply += caps[c] * (nv - v[c]);
                v[c] = nv;
                ledger.max_voltage = ledger.max_voltage.max(nv);
            }
            ledger.supply_in += q_supply;
            deposit(&mut bins, dt, a, b, q_supply);
        }
    }
    ledger.final_voltages = v;
    Ok((bins, ledger))
}

/// Simulates the supply current for every trace of `aes`. Trace `i` uses
/// schedule phases `[i * P, (i + 1) * P)` with `P = phases_per_trace`, and
/// starts from fully precharged capacitors.
pub fn simulate_detailed(
    aes: &TraceSet,
    cfg: &CircuitConfig,
    sched: &Schedule,
) -> Result<SupplySimulation, CircuitError> {
    cfg.validate()?;
    if sched.n_capacitors() != cfg.n_capacitors() {
        return Err(CircuitError::CapacitorCountMismatch {
            schedule: sched.n_capacitors(),
            circuit: cfg.n_capacitors(),
        });
    }
    let per_trace = phases_per_trace(aes, cfg);
    let needed = per_trace * aes.n_traces();
    if sched.n_phases() < needed {
        return Err(CircuitError::ScheduleTooShort {
            needed,
            available: sched.n_phases(),
        });
    }
    let n_samples = aes.n_samples();
    let dt = aes.sample_period();

    let results: Vec<(Vec<f64>, ChargeLedger)> = (0..aes.n_traces())
        .into_par_iter()
        .map(|i| {
            let first = i * per_trace;
            simulate_one(
                LoadCurrent {
                    samples: aes.trace(i),
                    dt,
                },
                n_samples,
                cfg,
                &sched.phases()[first..first + per_trace],
                first,
            )
        })
        .collect::<Result<_, _>>()?;

    let mut samples = Vec::with_capacity(n_samples * aes.n_traces());
    let mut ledgers = Vec::with_capacity(aes.n_traces());
    for (bins, ledger) in results {
        samples.extend(bins.iter().map(|q| (q / dt) as f32));
        ledgers.push(ledger);
    }
    let supply = aes.with_samples(n_samples, dt, samples, aes.label().to_string())?;
    Ok(SupplySimulation {
        supply,
        ledgers,
        phases_per_trace: per_trace,
    })
}

/// Attacker-visible supply current for every trace of `aes`.
pub fn simulate_supply_current(
    aes: &TraceSet,
    cfg: &CircuitConfig,
    sched: &Schedule,
) -> Result<TraceSet, CircuitError> {
    simulate_detailed(aes, cfg, sched).map(|s| s.supply)
}
