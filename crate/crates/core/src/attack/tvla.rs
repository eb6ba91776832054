//! Fixed-vs-random Welch t-test.

use crate::error::AttackError;
use crate::trace::TraceSet;

/// Conventional pass/fail threshold on `|t|`.
pub const TVLA_THRESHOLD: f64 = 4.5;

#[derive(Clone, Debug)]
pub struct TvlaReport {
    /// Welch t per sample; NaN where both groups have zero variance.
    pub t_values: Vec<f64>,
    /// Largest defined `|t|`, zero if none is defined.
    pub max_abs_t: f64,
    pub n_fixed: usize,
    pub n_random: usize,
}

impl TvlaReport {
    pub fn traces_per_group(&self) -> usize {
        self.n_fixed.min(self.n_random)
    }

    pub fn t(&self, sample: usize) -> Option<f64> {
        let t = self.t_values[sample];
        (!t.is_nan()).then_some(t)
    }

    pub fn leaks(&self) -> bool {
        self.max_abs_t > TVLA_THRESHOLD
    }

    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "sample,t")?;
        for (s, t) in self.t_values.iter().enumerate() {
            if t.is_nan() {
                writeln!(w, "{s},")?;
            } else {
                writeln!(w, "{s},{t}")?;
            }
        }
        Ok(())
    }
}

/// Shifted mean and unbiased variance per column.
fn column_moments(ts: &TraceSet) -> (Vec<f64>, Vec<f64>) {
    let ns = ts.n_samples();
    let n = ts.n_traces() as f64;
    let shift: Vec<f64> = ts.trace(0).iter().map(|&v| v as f64).collect();
    let mut sum = vec![0.0; ns];
    let mut sum_sq = vec![0.0; ns];
    for row in ts.rows() {
        for s in 0..ns {
            let x = row[s] as f64 - shift[s];
            sum[s] += x;
            sum_sq[s] += x * x;
        }
    }
    let mean: Vec<f64> = sum.iter().zip(&shift).map(|(a, b)| a / n + b).collect();
    let var = sum
        .iter()
        .zip(&sum_sq)
        .map(|(&a, &q)| ((q - a * a / n) / (n - 1.0)).max(0.0))
        .collect();
    (mean, var)
}

pub fn welch_t(m1: f64, v1: f64, n1: usize, m2: f64, v2: f64, n2: usize) -> Option<f64> {
    if v1 == 0.0 && v2 == 0.0 {
        return None;
    }
    Some((m1 - m2) / (v1 / n1 as f64 + v2 / n2 as f64).sqrt())
}

pub fn tvla(fixed: &TraceSet, random: &TraceSet) -> Result<TvlaReport, AttackError> {
    if fixed.n_samples() != random.n_samples() {
        return Err(AttackError::GeometryMismatch(format!(
            "{} vs {} samples per trace",
            fixed.n_samples(),
            random.n_samples()
        )));
    }
    if fixed.sample_period() != random.sample_period() {
        return Err(AttackError::GeometryMismatch(format!(
            "sample period {} vs {}",
            fixed.sample_period(),
            random.sample_period()
        )));
    }
    for set in [fixed, random] {
        if set.n_traces() < 2 {
            return Err(AttackError::TooFewTraces {
                needed: 2,
                got: set.n_traces(),
            });
        }
    }
    let pt0 = fixed.plaintexts()[0];
    if let Some(i) = fixed.plaintexts().iter().position(|p| *p != pt0) {
        return Err(AttackError::NotFixedInput(i));
    }
    welch_t_test(fixed, random)
}

/// Same statistic without the fixed-plaintext check, for comparing any two
/// groups (e.g. two halves of one random set).
pub fn welch_t_test(a: &TraceSet, b: &TraceSet) -> Result<TvlaReport, AttackError> {
    if a.n_samples() != b.n_samples() {
        return Err(AttackError::GeometryMismatch(format!(
            "{} vs {} samples per trace",
            a.n_samples(),
            b.n_samples()
        )));
    }
    let (m1, v1) = column_moments(a);
    let (m2, v2) = column_moments(b);
    let t_values: Vec<f64> = (0..a.n_samples())
        .map(|s| welch_t(m1[s], v1[s], a.n_traces(), m2[s], v2[s], b.n_traces()).unwrap_or(f64::NAN))
        .collect();
    let max_abs_t = t_values
        .iter()
        .filter(|t| !t.is_nan())
        .fold(0.0f64, |a, t| a.max(t.abs()));
    Ok(TvlaReport {
        t_values,
        max_abs_t,
        n_fixed: a.n_traces(),
        n_random: b.n_traces(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{synthesize_fixed_trace_set, synthesize_trace_set, Block, LeakageParams};

    const KEY: Block = [7; 16];

    fn split(ts: &TraceSet, at: usize) -> (TraceSet, TraceSet) {
        let ns = ts.n_samples();
        let (a, b) = ts.samples().split_at(at * ns);
        let (pa, pb) = ts.plaintexts().split_at(at);
        (
            TraceSet::new(ns, ts.sample_period(), a.to_vec(), pa.to_vec(), None, "a").unwrap(),
            TraceSet::new(ns, ts.sample_period(), b.to_vec(), pb.to_vec(), None, "b").unwrap(),
        )
    }

    #[test]
    fn identical_moments_give_zero() {
        assert_eq!(welch_t(1.0, 2.0, 10, 1.0, 2.0, 10), Some(0.0));
        assert_eq!(welch_t(1.0, 0.0, 10, 2.0, 0.0, 10), None);
        // Hand computed: (3-1)/sqrt(4/4 + 1/4)
        let t = welch_t(3.0, 4.0, 4, 1.0, 1.0, 4).unwrap();
        assert!((t - 2.0 / 1.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn unprotected_fixed_vs_random_leaks_quickly() {
        let p = LeakageParams::default().with_noise(LeakageParams::SIGMA_20DB);
        let pt: Block = *b"fixed plaintext!";
        let fixed = synthesize_fixed_trace_set(&KEY, &pt, 5, &p, 1).unwrap();
        let random = synthesize_trace_set(&KEY, 5, &p, 2).unwrap();
        let r = tvla(&fixed, &random).unwrap();
        assert!(r.leaks(), "max |t| = {}", r.max_abs_t);
    }

    #[test]
    fn halves_of_one_random_set_do_not_leak() {
        let p = LeakageParams::default().with_noise(LeakageParams::SIGMA_20DB);
        let ts = synthesize_trace_set(&KEY, 2000, &p, 3).unwrap();
        let (a, b) = split(&ts, 1000);
        let r = welch_t_test(&a, &b).unwrap();
        assert!(!r.leaks(), "max |t| = {}", r.max_abs_t);
    }

    #[test]
    fn noiseless_constant_columns_are_undefined() {
        let p = LeakageParams::default();
        let fixed = synthesize_fixed_trace_set(&KEY, &[1u8; 16], 10, &p, 1).unwrap();
        let random = synthesize_trace_set(&KEY, 10, &p, 2).unwrap();
        let r = tvla(&fixed, &random).unwrap();
        assert_eq!(r.t(0), None);
        assert!(r.t(p.leakage_sample(0)).is_some());
    }

    #[test]
    fn rejects_varying_fixed_set_and_mismatched_geometry() {
        let p = LeakageParams::default();
        let random = synthesize_trace_set(&KEY, 10, &p, 2).unwrap();
        assert!(matches!(tvla(&random, &random), Err(AttackError::NotFixedInput(_))));
        let short = random.with_samples(1, 1e-9, random.samples()[..10].to_vec(), "x");
        assert!(matches!(tvla(&short.unwrap(), &random), Err(AttackError::GeometryMismatch(_))));
    }
}
