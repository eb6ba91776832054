//! Correlation power analysis against the first-round S-box output.

use rayon::prelude::*;

use crate::error::AttackError;
use crate::trace::{hypothetical_leakage, Block, TraceSet, BLOCK_BYTES};

/// Hamming-weight hypothesis for every (guess, plaintext byte) pair.
fn hypothesis_table() -> &'static [[u8; 256]; 256] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Box<[[u8; 256]; 256]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Box::new([[0u8; 256]; 256]);
        for (g, row) in t.iter_mut().enumerate() {
            for (v, h) in row.iter_mut().enumerate() {
                *h = hypothetical_leakage(v as u8, g as u8) as u8;
            }
        }
        t
    })
}

/// Outcome of one CPA run.
#[derive(Clone, Debug)]
pub struct AttackReport {
    pub target_byte: usize,
    pub n_samples: usize,
    /// Row-major `256 x n_samples` Pearson coefficients; NaN marks a
    /// coefficient that is undefined because one side has zero variance.
    correlations: Vec<f64>,
    pub best_guess: Option<u8>,
    pub rank_of_true_key: Option<usize>,
    pub traces_used: usize,
    /// Every guess produced a constant hypothesis (e.g. all plaintext bytes
    /// equal), so nothing could be ranked.
    pub degenerate_hypothesis: bool,
}

impl AttackReport {
    pub fn correlation(&self, guess: u8, sample: usize) -> Option<f64> {
        let r = self.correlations[guess as usize * self.n_samples + sample];
        (!r.is_nan()).then_some(r)
    }

    pub fn correlation_row(&self, guess: u8) -> &[f64] {
        let g = guess as usize;
        &self.correlations[g * self.n_samples..(g + 1) * self.n_samples]
    }

    /// Largest defined `|rho|` for a guess, with the sample where it occurs.
    pub fn peak(&self, guess: u8) -> Option<(usize, f64)> {
        self.correlation_row(guess)
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.is_nan())
            .map(|(s, r)| (s, r.abs()))
            .fold(None, |best, (s, r)| match best {
                Some((_, b)) if b >= r => best,
                _ => Some((s, r)),
            })
    }

    pub fn scores(&self) -> Vec<f64> {
        (0..=255u8)
            .map(|g| self.peak(g).map_or(f64::NEG_INFINITY, |(_, r)| r))
            .collect()
    }

    /// Position of `guess` when guesses are ordered by peak `|rho|`, ties
    /// going to the lower guess value. 1 is best.
    pub fn rank_of(&self, guess: u8) -> usize {
        rank_in(&self.scores(), guess)
    }

    /// CSV of the full `guess x sample` matrix; undefined entries are empty.
    pub fn write_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        write!(w, "guess")?;
        for s in 0..self.n_samples {
            write!(w, ",s{s}")?;
        }
        writeln!(w)?;
        for g in 0..=255u8 {
            write!(w, "{g}")?;
            for r in self.correlation_row(g) {
                if r.is_nan() {
                    write!(w, ",")?;
                } else {
                    write!(w, ",{r}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn rank_in(scores: &[f64], guess: u8) -> usize {
    let t = scores[guess as usize];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(g, &s)| s > t || (s == t && g < guess as usize))
        .count()
}

fn best_of(scores: &[f64]) -> Option<u8> {
    let mut best: Option<(usize, f64)> = None;
    for (g, &s) in scores.iter().enumerate() {
        if s == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((g, s));
        }
    }
    best.map(|(g, _)| g as u8)
}

/// One-pass CPA statistics. Samples are accumulated relative to the first
/// trace so constant columns give exactly zero variance, and traces are
/// folded in arrival order so results do not depend on threading.
#[derive(Clone, Debug)]
pub struct CpaAccumulator {
    target_byte: usize,
    n_samples: usize,
    reference: Vec<f64>,
    count: u64,
    sum_x: Vec<f64>,
    sum_xx: Vec<f64>,
    /// Per plaintext-byte value: sum of shifted samples, `256 x n_samples`.
    sum_by_value: Vec<f64>,
    count_by_value: [u64; 256],
}

impl CpaAccumulator {
    pub fn new(n_samples: usize, target_byte: usize) -> Result<Self, AttackError> {
        if target_byte >= BLOCK_BYTES {
            return Err(AttackError::BadTargetByte(target_byte));
        }
        Ok(Self {
            target_byte,
            n_samples,
            reference: Vec::new(),
            count: 0,
            sum_x: vec![0.0; n_samples],
            sum_xx: vec![0.0; n_samples],
            sum_by_value: vec![0.0; 256 * n_samples],
            count_by_value: [0; 256],
        })
    }

    pub fn count(&self) -> usize {
        self.count as usize
    }

    pub fn update(&mut self, trace: &[f32], plaintext: &Block) {
        debug_assert_eq!(trace.len(), self.n_samples);
        if self.reference.is_empty() {
            self.reference = trace.iter().map(|&v| v as f64).collect();
        }
        let v = plaintext[self.target_byte] as usize;
        let row = &mut self.sum_by_value[v * self.n_samples..(v + 1) * self.n_samples];
        for (s, (&x, r)) in trace.iter().zip(&self.reference).enumerate() {
            let x = x as f64 - r;
            self.sum_x[s] += x;
            self.sum_xx[s] += x * x;
            row[s] += x;
        }
        self.count_by_value[v] += 1;
        self.count += 1;
    }

    fn correlations(&self) -> (Vec<f64>, bool) {
        let n = self.count as f64;
        let ns = self.n_samples;
        let table = hypothesis_table();
        let var_x: Vec<f64> = self
            .sum_x
            .iter()
            .zip(&self.sum_xx)
            .map(|(&sx, &sxx)| (n * sxx - sx * sx).max(0.0))
            .collect();
        let rows: Vec<(Vec<f64>, bool)> = (0..256usize)
            .into_par_iter()
            .map(|g| {
                let h = &table[g];
                let (mut sh, mut shh) = (0u64, 0u64);
                for (&c, &hv) in self.count_by_value.iter().zip(h.iter()) {
                    let hv = hv as u64;
                    sh += c * hv;
                    shh += c * hv * hv;
                }
                let var_h = self.count * shh - sh * sh;
                if var_h == 0 {
                    return (vec![f64::NAN; ns], true);
                }
                let mut shx = vec![0.0; ns];
                for (v, (&c, &hv)) in self.count_by_value.iter().zip(h.iter()).enumerate() {
                    if c == 0 || hv == 0 {
                        continue;
                    }
                    let hv = hv as f64;
                    let row = &self.sum_by_value[v * ns..(v + 1) * ns];
                    for (acc, x) in shx.iter_mut().zip(row) {
                        *acc += hv * x;
                    }
                }
                let sh = sh as f64;
                let var_h = var_h as f64;
                let out = shx
                    .iter()
                    .zip(&self.sum_x)
                    .zip(&var_x)
                    .map(|((&shx, &sx), &vx)| {
                        if vx == 0.0 {
                            f64::NAN
                        } else {
                            ((n * shx - sh * sx) / (var_h * vx).sqrt()).clamp(-1.0, 1.0)
                        }
                    })
                    .collect();
                (out, false)
            })
            .collect();
        let degenerate = rows.iter().all(|(_, d)| *d);
        let mut flat = Vec::with_capacity(256 * ns);
        for (r, _) in rows {
            flat.extend(r);
        }
        (flat, degenerate)
    }

    pub fn report(&self, true_key: Option<u8>) -> AttackReport {
        let (correlations, degenerate) = self.correlations();
        let mut report = AttackReport {
            target_byte: self.target_byte,
            n_samples: self.n_samples,
            correlations,
            best_guess: None,
            rank_of_true_key: None,
            traces_used: self.count as usize,
            degenerate_hypothesis: degenerate,
        };
        let scores = report.scores();
        report.best_guess = best_of(&scores);
        report.rank_of_true_key = true_key.map(|k| rank_in(&scores, k));
        report
    }
}

/// CPA over every trace of `ts`. The true key byte is ranked when the set
/// carries a key.
pub fn cpa_attack(ts: &TraceSet, target_byte: usize) -> Result<AttackReport, AttackError> {
    if ts.n_traces() < 2 {
        return Err(AttackError::TooFewTraces {
            needed: 2,
            got: ts.n_traces(),
        });
    }
    let mut acc = CpaAccumulator::new(ts.n_samples(), target_byte)?;
    for (row, pt) in ts.rows().zip(ts.plaintexts()) {
        acc.update(row, pt);
    }
    Ok(acc.report(ts.key().map(|k| k[target_byte])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{synthesize_trace_set, LeakageParams};

    const KEY: Block = *b"sixteen byte key";

    /// Textbook two-pass Pearson coefficient.
    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn noiseless_trace_gives_unit_correlation_for_true_key() {
        let p = LeakageParams::default();
        let ts = synthesize_trace_set(&KEY, 200, &p, 3).unwrap();
        let r = cpa_attack(&ts, 13).unwrap();
        let rho = r.correlation(KEY[13], p.leakage_sample(13)).unwrap();
        assert!((rho - 1.0).abs() < 1e-9, "{rho}");
        assert_eq!(r.best_guess, Some(KEY[13]));
        assert_eq!(r.rank_of_true_key, Some(1));
        // Constant baseline columns are undefined, not zero.
        assert_eq!(r.correlation(KEY[13], p.leakage_sample(13) + 1), None);
    }

    #[test]
    fn one_pass_matches_two_pass() {
        let p = LeakageParams::default().with_noise(LeakageParams::SIGMA_20DB);
        let ts = synthesize_trace_set(&KEY, 10_000, &p, 4).unwrap();
        let r = cpa_attack(&ts, 5).unwrap();
        for &g in &[0u8, KEY[5], 200] {
            let h: Vec<f64> = ts
                .plaintexts()
                .iter()
                .map(|pt| hypothetical_leakage(pt[5], g) as f64)
                .collect();
            for &s in &[0usize, p.leakage_sample(5), 255] {
                let x: Vec<f64> = ts.rows().map(|row| row[s] as f64).collect();
                let two_pass = pearson(&h, &x);
                let one_pass = r.correlation(g, s).unwrap();
                assert!(
                    (one_pass - two_pass).abs() <= 1e-10 * two_pass.abs().max(1e-3),
                    "guess {g} sample {s}: {one_pass} vs {two_pass}"
                );
            }
        }
    }

    #[test]
    fn constant_plaintext_byte_is_flagged() {
        let p = LeakageParams::default();
        let ts = synthesize_trace_set(&KEY, 20, &p, 1).unwrap();
        let pts = vec![[9u8; 16]; 20];
        let fixed = TraceSet::new(ts.n_samples(), ts.sample_period(), ts.samples().to_vec(), pts, None, "").unwrap();
        let r = cpa_attack(&fixed, 0).unwrap();
        assert!(r.degenerate_hypothesis);
        assert_eq!(r.best_guess, None);
    }

    #[test]
    fn positive_scaling_keeps_ranking() {
        let p = LeakageParams::default().with_noise(LeakageParams::SIGMA_20DB);
        let ts = synthesize_trace_set(&KEY, 60, &p, 8).unwrap();
        let a = cpa_attack(&ts, 2).unwrap();
        let b = cpa_attack(&ts.map_samples(|v| 7.5 * v + 0.25).unwrap(), 2).unwrap();
        let ranks_a: Vec<usize> = (0..=255u8).map(|g| a.rank_of(g)).collect();
        let ranks_b: Vec<usize> = (0..=255u8).map(|g| b.rank_of(g)).collect();
        assert_eq!(ranks_a, ranks_b);
    }

    #[test]
    fn rejects_single_trace_and_bad_byte() {
        let ts = synthesize_trace_set(&KEY, 1, &LeakageParams::default(), 1).unwrap();
        assert!(matches!(cpa_attack(&ts, 0), Err(AttackError::TooFewTraces { .. })));
        assert!(CpaAccumulator::new(4, 16).is_err());
    }

    #[test]
    fn ranking_breaks_ties_toward_lower_guess() {
        let scores = vec![0.5; 256];
        assert_eq!(rank_in(&scores, 0), 1);
        assert_eq!(rank_in(&scores, 10), 11);
        assert_eq!(best_of(&scores), Some(0));
    }
}
