//! Minimum traces to disclosure.

use crate::error::AttackError;
use crate::trace::TraceSet;

use super::cpa::CpaAccumulator;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MtdResult {
    pub checkpoints: Vec<usize>,
    pub rank_at_checkpoint: Vec<usize>,
    /// First checkpoint from which the true key stays at rank 1 through the
    /// last checkpoint; `None` when that never happens.
    pub mtd: Option<usize>,
}

impl MtdResult {
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "traces,rank")?;
        for (c, r) in self.checkpoints.iter().zip(&self.rank_at_checkpoint) {
            writeln!(w, "{c},{r}")?;
        }
        Ok(())
    }

    pub fn mtd_display(&self) -> String {
        self.mtd
            .map_or_else(|| "not reached".to_string(), |m| m.to_string())
    }
}

/// Geometric grid with `per_decade` points per factor of ten, starting at
/// `start` and ending exactly at `budget`. Rounded duplicates are dropped.
pub fn geometric_checkpoints(start: usize, budget: usize, per_decade: usize) -> Vec<usize> {
    let start = start.max(2);
    if budget < start {
        return vec![budget];
    }
    let step = 10f64.powf(1.0 / per_decade.max(1) as f64);
    let mut out: Vec<usize> = Vec::new();
    let mut k = 0i32;
    loop {
        let c = (start as f64 * step.powi(k)).round() as usize;
        if c >= budget {
            break;
        }
        if out.last() != Some(&c) {
            out.push(c);
        }
        k += 1;
    }
    out.push(budget);
    out
}

/// Default grid: 20 points per decade from 10 traces up to `budget`.
pub fn default_checkpoints(budget: usize) -> Vec<usize> {
    geometric_checkpoints(10, budget, 20)
}

/// Ranks the true key byte after the first `c` traces for every checkpoint
/// `c`, streaming the traces once in file order.
pub fn compute_mtd(
    ts: &TraceSet,
    true_key: u8,
    target_byte: usize,
    checkpoints: &[usize],
) -> Result<MtdResult, AttackError> {
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AttackError::BadCheckpoints);
    }
    if checkpoints[0] < 2 {
        return Err(AttackError::TooFewTraces {
            needed: 2,
            got: checkpoints[0],
        });
    }
    let last = *checkpoints.last().unwrap();
    if last > ts.n_traces() {
        return Err(AttackError::CheckpointOutOfRange {
            checkpoint: last,
            available: ts.n_traces(),
        });
    }
    let mut acc = CpaAccumulator::new(ts.n_samples(), target_byte)?;
    let mut ranks = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();
    for (i, (row, pt)) in ts.rows().zip(ts.plaintexts()).enumerate().take(last) {
        acc.update(row, pt);
        if next.peek() == Some(&&(i + 1)) {
            next.next();
            ranks.push(acc.report(None).rank_of(true_key));
        }
    }
    let mtd = stable_rank_one(checkpoints, &ranks);
    Ok(MtdResult {
        checkpoints: checkpoints.to_vec(),
        rank_at_checkpoint: ranks,
        mtd,
    })
}

fn stable_rank_one(checkpoints: &[usize], ranks: &[usize]) -> Option<usize> {
    let tail = ranks.iter().rev().take_while(|&&r| r == 1).count();
    (tail > 0).then(|| checkpoints[ranks.len() - tail])
}
