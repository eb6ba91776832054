//! Randomized capacitor scheduling and the leakage-probability analysis of
//! choosing `m` of `n` capacitors per role.

mod lfsr;
mod pleak;

pub use lfsr::{
    enumerate_period, is_primitive_32, lfsr_step, ChainConfig, Lfsr, LfsrChain, TAPS_16, TAPS_3,
    TAPS_32, TAPS_4, TAPS_8,
};
pub use pleak::{binomial, p_leak, p_leak_exact, p_leak_monte_carlo, standard_error};

use serde::{Deserialize, Serialize};

use crate::circuit::{CapSet, PhaseRoles, Schedule};
use crate::error::ShuffleError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShuffleParams {
    /// Capacitors in the array.
    pub n: usize,
    /// Capacitors picked per role per phase.
    pub m: usize,
    pub phases_per_cycle: usize,
    pub n_cycles: usize,
}

impl ShuffleParams {
    pub fn n_phases(&self) -> usize {
        self.phases_per_cycle * self.n_cycles
    }

    /// Whether a fresh charging set can avoid the previous one at all.
    pub fn is_leak_avoidable(&self) -> bool {
        self.n > 2 * self.m
    }

    pub fn validate(&self) -> Result<(), ShuffleError> {
        if self.m == 0 {
            return Err(ShuffleError::InvalidParams("m must be at least 1".into()));
        }
        if self.n < 2 || self.n > crate::circuit::MAX_CAPACITORS {
            return Err(ShuffleError::InvalidParams(format!(
                "n must be in 2..={}, got {}",
                crate::circuit::MAX_CAPACITORS,
                self.n
            )));
        }
        if self.phases_per_cycle == 0 {
            return Err(ShuffleError::InvalidParams(
                "phases_per_cycle must be at least 1".into(),
            ));
        }
        let smaller_pool = self.n / 2;
        if self.m > smaller_pool {
            return Err(ShuffleError::PoolExhausted {
                needed: self.m,
                available: smaller_pool,
            });
        }
        Ok(())
    }
}

fn draw_from(
    pool: &mut Vec<usize>,
    m: usize,
    chain: &mut LfsrChain,
) -> Result<Vec<usize>, ShuffleError> {
    if m > pool.len() {
        return Err(ShuffleError::PoolExhausted {
            needed: m,
            available: pool.len(),
        });
    }
    (0..m)
        .map(|_| {
            let i = chain.draw_index(pool.len())?;
            Ok(pool.remove(i))
        })
        .collect()
}

/// Randomized schedule: capacitors start split into a "to be charged" pool
/// (even indices) and a "to supply the load" pool (odd indices). Every phase
/// draws `m` of each, and after the phase the charged ones join the supply
/// pool while the drivers join the charge pool.
///
/// The chain is advanced in place so consecutive calls continue the same
/// pseudo-random sequence.
pub fn tvtf_schedule(params: &ShuffleParams, chain: &mut LfsrChain) -> Result<Schedule, ShuffleError> {
    params.validate()?;
    let mut to_charge: Vec<usize> = (0..params.n).step_by(2).collect();
    let mut to_supply: Vec<usize> = (1..params.n).step_by(2).collect();
    let mut phases = Vec::with_capacity(params.n_phases());
    for _ in 0..params.n_phases() {
        let charged = draw_from(&mut to_charge, params.m, chain)?;
        let drivers = draw_from(&mut to_supply, params.m, chain)?;
        phases.push(PhaseRoles::new(
            CapSet::from_indices(charged.iter().copied()),
            CapSet::from_indices(drivers.iter().copied()),
        ));
        to_supply.extend(charged);
        to_charge.extend(drivers);
    }
    Ok(Schedule::new(params.n, phases).expect("pools are disjoint by construction"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(n: usize, m: usize, cycles: usize) -> ShuffleParams {
        ShuffleParams {
            n,
            m,
            phases_per_cycle: n,
            n_cycles: cycles,
        }
    }

    #[test]
    fn two_capacitors_alternate() {
        let mut chain = ChainConfig::default().build().unwrap();
        let s = tvtf_schedule(&params(2, 1, 5), &mut chain).unwrap();
        for (k, r) in s.phases().iter().enumerate() {
            let (ch, dr) = if k % 2 == 0 { (0, 1) } else { (1, 0) };
            assert_eq!(r.charging, CapSet::from_indices([ch]));
            assert_eq!(r.driving, CapSet::from_indices([dr]));
        }
    }

    #[test]
    fn deterministic_for_fixed_seeds() {
        let p = params(10, 1, 40);
        let a = tvtf_schedule(&p, &mut ChainConfig::default().build().unwrap()).unwrap();
        let b = tvtf_schedule(&p, &mut ChainConfig::default().build().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_capacitor_charges_within_255_phases() {
        let p = ShuffleParams {
            n: 10,
            m: 1,
            phases_per_cycle: 255,
            n_cycles: 1,
        };
        let s = tvtf_schedule(&p, &mut ChainConfig::default().build().unwrap()).unwrap();
        let charged = s
            .phases()
            .iter()
            .fold(CapSet::EMPTY, |acc, r| acc.union(r.charging));
        assert_eq!(charged.len(), 10);
    }

    #[test]
    fn charging_capacitor_never_drives_in_same_phase_and_recharges_after_driving() {
        let s = tvtf_schedule(&params(10, 1, 30), &mut ChainConfig::default().build().unwrap())
            .unwrap();
        // A capacitor may only be recharged after it has driven, and only
        // drive again after it has been recharged.
        let mut last: [Option<bool>; 10] = [None; 10];
        for r in s.phases() {
            assert!(!r.charging.intersects(r.driving));
            for c in r.charging.iter() {
                assert_ne!(last[c], Some(false));
                last[c] = Some(false);
            }
            for c in r.driving.iter() {
                assert_ne!(last[c], Some(true));
                last[c] = Some(true);
            }
        }
    }

    #[test]
    fn pool_exhaustion_is_an_error() {
        let mut chain = ChainConfig::default().build().unwrap();
        assert!(matches!(
            tvtf_schedule(&params(10, 6, 1), &mut chain),
            Err(ShuffleError::PoolExhausted { .. })
        ));
        assert!(tvtf_schedule(&params(10, 0, 1), &mut chain).is_err());
    }

    #[test]
    fn chain_state_carries_over_between_calls() {
        let p = params(10, 1, 4);
        let mut chain = ChainConfig::default().build().unwrap();
        let first = tvtf_schedule(&p, &mut chain).unwrap();
        let second = tvtf_schedule(&p, &mut chain).unwrap();
        assert_ne!(first, second);
    }

    proptest! {
        #[test]
        fn schedules_are_valid_and_pools_conserved(
            n in 2usize..16,
            m in 1usize..4,
            cycles in 1usize..8,
            seed in 1u64..255,
            sel in 1u64..15,
        ) {
            prop_assume!(m <= n / 2);
            let cfg = ChainConfig { primary_seed: seed, selector_seed: sel, ..ChainConfig::default() };
            let p = params(n, m, cycles);
            let s = tvtf_schedule(&p, &mut cfg.build().unwrap()).unwrap();
            prop_assert!(s.validate().is_ok());
            prop_assert_eq!(s.n_phases(), n * cycles);
            // Replaying the pool moves: sizes never change.
            let mut in_charge_pool: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            for r in s.phases() {
                prop_assert_eq!(r.charging.len(), m);
                prop_assert_eq!(r.driving.len(), m);
                for c in r.charging.iter() {
                    prop_assert!(in_charge_pool[c]);
                    in_charge_pool[c] = false;
                }
                for c in r.driving.iter() {
                    prop_assert!(!in_charge_pool[c]);
                    in_charge_pool[c] = true;
                }
                prop_assert_eq!(in_charge_pool.iter().filter(|&&b| b).count(), n.div_ceil(2));
            }
        }
    }
}
