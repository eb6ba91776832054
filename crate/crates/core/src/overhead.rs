//! Power and area cost of the capacitor array, its switches and the PRNG.

use serde::{Deserialize, Serialize};

use crate::error::OverheadError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverheadParams {
    pub switching_frequency: f64,
    pub unit_capacitance: f64,
    /// Largest voltage drop on a capacitor between recharges.
    pub max_droop: f64,
    pub gate_capacitance_per_switch: f64,
    pub v_dd: f64,
    pub prng_power: f64,
    pub aes_power: f64,
    /// Areas in mm^2.
    pub aes_area: f64,
    pub cap_area: f64,
    pub prng_area: f64,
    pub switch_area: f64,
}

impl OverheadParams {
    /// Gate capacitance that yields 50 uW of switch drive at 1.25 GHz and
    /// 1.2 V.
    pub const DEFAULT_GATE_CAPACITANCE: f64 = 50e-6 / (1.25e9 * 1.2 * 1.2);
}

impl Default for OverheadParams {
    fn default() -> Self {
        Self {
            switching_frequency: 1.25e9,
            unit_capacitance: 20e-12,
            max_droop: 0.1,
            gate_capacitance_per_switch: Self::DEFAULT_GATE_CAPACITANCE,
            v_dd: 1.2,
            prng_power: 150e-6,
            aes_power: 1.32e-3,
            aes_area: 0.15,
            cap_area: 0.024,
            prng_area: 0.004,
            switch_area: 0.002,
        }
    }
}

impl OverheadParams {
    /// The AES baseline and the operating point must be positive; the added
    /// costs may be zero.
    pub fn validate(&self) -> Result<(), OverheadError> {
        let positive = [
            ("switching_frequency", self.switching_frequency),
            ("unit_capacitance", self.unit_capacitance),
            ("v_dd", self.v_dd),
            ("aes_power", self.aes_power),
            ("aes_area", self.aes_area),
        ];
        let non_negative = [
            ("max_droop", self.max_droop),
            ("gate_capacitance_per_switch", self.gate_capacitance_per_switch),
            ("prng_power", self.prng_power),
            ("cap_area", self.cap_area),
            ("prng_area", self.prng_area),
            ("switch_area", self.switch_area),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(OverheadError::NonPositive { name, value });
            }
        }
        for (name, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(OverheadError::NonPositive { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerBreakdown {
    pub charge_loss: f64,
    pub switching: f64,
    pub prng: f64,
    pub total: f64,
    pub ratio: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AreaBreakdown {
    pub total_added: f64,
    pub ratio: f64,
}

pub fn power_overhead(p: &OverheadParams) -> Result<PowerBreakdown, OverheadError> {
    p.validate()?;
    let charge_loss = 0.5 * p.switching_frequency * p.unit_capacitance * p.max_droop * p.max_droop;
    let switching = p.switching_frequency * p.gate_capacitance_per_switch * p.v_dd * p.v_dd;
    let total = charge_loss + switching + p.prng_power;
    Ok(PowerBreakdown {
        charge_loss,
        switching,
        prng: p.prng_power,
        total,
        ratio: (p.aes_power + total) / p.aes_power,
    })
}

pub fn area_overhead(p: &OverheadParams) -> Result<AreaBreakdown, OverheadError> {
    p.validate()?;
    let total_added = p.cap_area + p.prng_area + p.switch_area;
    Ok(AreaBreakdown {
        total_added,
        ratio: (p.aes_area + total_added) / p.aes_area,
    })
}

/// `key=value` lines, SI units.
pub fn overhead_report(p: &OverheadParams) -> Result<String, OverheadError> {
    let pw = power_overhead(p)?;
    let ar = area_overhead(p)?;
    Ok(format!(
        "charge_loss_w={:.6e}\nswitching_w={:.6e}\nprng_w={:.6e}\npower_total_w={:.6e}\n\
         power_ratio={:.4}\narea_added_mm2={:.6}\narea_ratio={:.4}\n",
        pw.charge_loss, pw.switching, pw.prng, pw.total, pw.ratio, ar.total_added, ar.ratio
    ))
}
