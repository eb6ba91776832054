//! Sliding-window integration ahead of CPA.

use crate::error::AttackError;
use crate::trace::TraceSet;

use super::cpa::{cpa_attack, AttackReport};

/// Replaces every trace by its sums over windows of `window` samples taken
/// every `stride` samples. The sample period becomes `stride` times the
/// original.
pub fn integrate_windows(ts: &TraceSet, window: usize, stride: usize) -> Result<TraceSet, AttackError> {
    if window == 0 || stride == 0 {
        return Err(AttackError::BadWindow(format!(
            "window and stride must be at least 1 (window={window}, stride={stride})"
        )));
    }
    let ns = ts.n_samples();
    if window > ns {
        return Err(AttackError::BadWindow(format!(
            "window {window} exceeds {ns} samples per trace"
        )));
    }
    let n_out = (ns - window) / stride + 1;
    let mut out = Vec::with_capacity(ts.n_traces() * n_out);
    for row in ts.rows() {
        for k in 0..n_out {
            let start = k * stride;
            let sum: f64 = row[start..start + window].iter().map(|&v| v as f64).sum();
            out.push(sum as f32);
        }
    }
    let label = format!("{}-w{window}s{stride}", ts.label());
    ts.with_samples(n_out, ts.sample_period() * stride as f64, out, label)
        .map_err(|e| AttackError::BadWindow(e.to_string()))
}

pub fn sliding_window_cpa(
    ts: &TraceSet,
    window: usize,
    stride: usize,
    target_byte: usize,
) -> Result<AttackReport, AttackError> {
    cpa_attack(&integrate_windows(ts, window, stride)?, target_byte)
}
