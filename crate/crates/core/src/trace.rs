//! First-round AES power traces: the Hamming-weight leakage model, a seeded
//! synthetic trace generator and the `TraceSet` container shared by every
//! other module.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::TraceError;

/// Number of key / plaintext bytes in AES-128.
pub const BLOCK_BYTES: usize = 16;

pub type Block = [u8; BLOCK_BYTES];

#[rustfmt::skip]
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

#[inline]
pub fn sbox_lookup(b: u8) -> u8 {
    SBOX[b as usize]
}

#[inline]
pub fn hamming_weight(b: u8) -> u32 {
    b.count_ones()
}

/// Hamming weight of the first-round S-box output for one plaintext byte
/// under a key-byte hypothesis.
#[inline]
pub fn hypothetical_leakage(pt_byte: u8, key_guess: u8) -> u32 {
    hamming_weight(sbox_lookup(pt_byte ^ key_guess))
}

/// Electrical envelope of the synthetic byte-serial AES.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeakageParams {
    pub clock_frequency: f64,
    pub samples_per_clock: usize,
    pub peak_current: f64,
    pub base_current: f64,
    pub current_per_hw_unit: f64,
    pub leakage_sample_offset: usize,
    pub noise_sigma: f64,
}

impl Default for LeakageParams {
    fn default() -> Self {
        Self {
            clock_frequency: 125e6,
            samples_per_clock: 16,
            peak_current: 3e-3,
            base_current: 1e-3,
            current_per_hw_unit: 0.25e-3,
            leakage_sample_offset: 8,
            noise_sigma: 0.0,
        }
    }
}

impl LeakageParams {
    /// Noise level corresponding to a 20 dB SNR at the 3 mA peak.
    pub const SIGMA_20DB: f64 = 0.3e-3;

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |msg: String| Err(TraceError::InvalidParams(msg));
        if !(self.clock_frequency.is_finite() && self.clock_frequency > 0.0) {
            return bad(format!("clock_frequency must be positive, got {}", self.clock_frequency));
        }
        if self.samples_per_clock == 0 {
            return bad("samples_per_clock must be at least 1".into());
        }
        if self.leakage_sample_offset >= self.samples_per_clock {
            return bad(format!(
                "leakage_sample_offset {} must be below samples_per_clock {}",
                self.leakage_sample_offset, self.samples_per_clock
            ));
        }
        if !(self.base_current >= 0.0 && self.peak_current >= self.base_current) {
            return bad(format!(
                "need peak_current >= base_current >= 0, got peak {} base {}",
                self.peak_current, self.base_current
            ));
        }
        if !(self.current_per_hw_unit >= 0.0 && self.current_per_hw_unit.is_finite()) {
            return bad("current_per_hw_unit must be non-negative".into());
        }
        let top = self.base_current + 8.0 * self.current_per_hw_unit;
        if top > self.peak_current * (1.0 + 1e-12) {
            return bad(format!(
                "HW=8 draws {top} A, above peak_current {}",
                self.peak_current
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / (self.clock_frequency * self.samples_per_clock as f64)
    }

    pub fn samples_per_trace(&self) -> usize {
        BLOCK_BYTES * self.samples_per_clock
    }

    /// Sample index inside a trace at which byte `byte` leaks.
    pub fn leakage_sample(&self, byte: usize) -> usize {
        byte * self.samples_per_clock + self.leakage_sample_offset
    }

    /// Noiseless current at the leaky sample for a given Hamming weight.
    pub fn leak_current(&self, hw: u32) -> f64 {
        self.base_current + self.current_per_hw_unit * hw as f64
    }
}

/// A matrix of current samples (one row per trace) plus the plaintexts that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSet {
    n_traces: usize,
    n_samples: usize,
    sample_period: f64,
    samples: Vec<f32>,
    plaintexts: Vec<Block>,
    key: Option<Block>,
    label: String,
}

impl TraceSet {
    pub fn new(
        n_samples: usize,
        sample_period: f64,
        samples: Vec<f32>,
        plaintexts: Vec<Block>,
        key: Option<Block>,
        label: impl Into<String>,
    ) -> Result<Self, TraceError> {
        let n_traces = plaintexts.len();
        if n_traces == 0 {
            return Err(TraceError::Empty("trace set has no traces".into()));
        }
        if n_samples == 0 {
            return Err(TraceError::Empty("traces have no samples".into()));
        }
        if samples.len() != n_traces * n_samples {
            return Err(TraceError::DimensionMismatch(format!(
                "{} samples for {} traces x {} samples",
                samples.len(),
                n_traces,
                n_samples
            )));
        }
        if !(sample_period.is_finite() && sample_period > 0.0) {
            return Err(TraceError::InvalidParams(format!(
                "sample_period must be positive, got {sample_period}"
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(TraceError::NonFinite {
                trace: i / n_samples,
                sample: i % n_samples,
            });
        }
        Ok(Self {
            n_traces,
            n_samples,
            sample_period,
            samples,
            plaintexts,
            key,
            label: label.into(),
        })
    }

    pub fn n_traces(&self) -> usize {
        self.n_traces
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn key(&self) -> Option<&Block> {
        self.key.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn plaintexts(&self) -> &[Block] {
        &self.plaintexts
    }

    pub fn trace(&self, i: usize) -> &[f32] {
        &self.samples[i * self.n_samples..(i + 1) * self.n_samples]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.samples.chunks_exact(self.n_samples)
    }

    /// Copies the first `n` traces into a new set.
    pub fn truncated(&self, n: usize) -> Result<Self, TraceError> {
        if n == 0 || n > self.n_traces {
            return Err(TraceError::DimensionMismatch(format!(
                "cannot keep {n} of {} traces",
                self.n_traces
            )));
        }
        Ok(Self {
            n_traces: n,
            samples: self.samples[..n * self.n_samples].to_vec(),
            plaintexts: self.plaintexts[..n].to_vec(),
            ..self.clone()
        })
    }

    /// Same plaintexts, key and label with a new sample matrix.
    pub fn with_samples(
        &self,
        n_samples: usize,
        sample_period: f64,
        samples: Vec<f32>,
        label: impl Into<String>,
    ) -> Result<Self, TraceError> {
        Self::new(
            n_samples,
            sample_period,
            samples,
            self.plaintexts.clone(),
            self.key,
            label,
        )
    }

    /// Applies `f` to every sample.
    pub fn map_samples(&self, f: impl Fn(f32) -> f32) -> Result<Self, TraceError> {
        let samples = self.samples.iter().map(|&v| f(v)).collect();
        self.with_samples(self.n_samples, self.sample_period, samples, self.label.clone())
    }
}

fn synthesize_with(
    key: &Block,
    n_traces: usize,
    params: &LeakageParams,
    seed: u64,
    fixed_plaintext: Option<&Block>,
    label: String,
) -> Result<TraceSet, TraceError> {
    if n_traces == 0 {
        return Err(TraceError::Empty("n_traces must be positive".into()));
    }
    params.validate()?;
    let n_samples = params.samples_per_trace();
    let noise = if params.noise_sigma > 0.0 {
        Some(Normal::new(0.0, params.noise_sigma).expect("sigma validated"))
    } else {
        None
    };

    let mut samples = vec![0f32; n_traces * n_samples];
    let mut plaintexts = vec![[0u8; BLOCK_BYTES]; n_traces];
    samples
        .par_chunks_mut(n_samples)
        .zip(plaintexts.par_iter_mut())
        .enumerate()
        .for_each(|(index, (row, pt))| {
            // One independent stream per trace keeps output independent of
            // how the rows are split across workers.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            let drawn: Block = rng.gen();
            *pt = *fixed_plaintext.unwrap_or(&drawn);
            for (byte, cycle) in row.chunks_exact_mut(params.samples_per_clock).enumerate() {
                let hw = hypothetical_leakage(pt[byte], key[byte]);
                for (k, slot) in cycle.iter_mut().enumerate() {
                    let mut current = if k == params.leakage_sample_offset {
                        params.leak_current(hw)
                    } else {
                        params.base_current
                    };
                    if let Some(dist) = &noise {
                        current += dist.sample(&mut rng);
                    }
                    *slot = current as f32;
                }
            }
        });

    TraceSet::new(
        n_samples,
        params.sample_period(),
        samples,
        plaintexts,
        Some(*key),
        label,
    )
}

/// Generates `n_traces` byte-serial first-round AES traces with uniformly
/// random plaintexts. Bit-identical for a fixed `(key, n_traces, params, seed)`.
pub fn synthesize_trace_set(
    key: &Block,
    n_traces: usize,
    params: &LeakageParams,
    seed: u64,
) -> Result<TraceSet, TraceError> {
    synthesize_with(key, n_traces, params, seed, None, "unprotected".into())
}

/// Fixed-plaintext group for leakage assessment.
pub fn synthesize_fixed_trace_set(
    key: &Block,
    plaintext: &Block,
    n_traces: usize,
    params: &LeakageParams,
    seed: u64,
) -> Result<TraceSet, TraceError> {
    synthesize_with(key, n_traces, params, seed, Some(plaintext), "fixed".into())
}

/// Adds independent Gaussian measurement noise to every sample. Trace `i`
/// draws from its own stream of `seed`, as in synthesis.
pub fn add_measurement_noise(ts: &TraceSet, sigma: f64, seed: u64) -> Result<TraceSet, TraceError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(TraceError::InvalidParams(format!(
            "noise sigma must be non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(ts.clone());
    }
    let dist = Normal::new(0.0, sigma).expect("sigma checked");
    let mut samples = ts.samples().to_vec();
    samples
        .par_chunks_mut(ts.n_samples())
        .enumerate()
        .for_each(|(index, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(index as u64);
            for v in row {
                *v = (*v as f64 + dist.sample(&mut rng)) as f32;
            }
        });
    ts.with_samples(ts.n_samples(), ts.sample_period(), samples, ts.label().to_string())
}

/// Alternates rows of `a` and `b` (a0, b0, a1, b1, ...). Both sets must have
/// the same geometry and trace count.
pub fn interleave(a: &TraceSet, b: &TraceSet, label: &str) -> Result<TraceSet, TraceError> {
    if a.n_samples() != b.n_samples() || a.n_traces() != b.n_traces() {
        return Err(TraceError::DimensionMismatch(format!(
            "cannot interleave {}x{} with {}x{}",
            a.n_traces(),
            a.n_samples(),
            b.n_traces(),
            b.n_samples()
        )));
    }
    let mut samples = Vec::with_capacity(2 * a.samples().len());
    let mut plaintexts = Vec::with_capacity(2 * a.n_traces());
    for i in 0..a.n_traces() {
        samples.extend_from_slice(a.trace(i));
        samples.extend_from_slice(b.trace(i));
        plaintexts.push(a.plaintexts()[i]);
        plaintexts.push(b.plaintexts()[i]);
    }
    TraceSet::new(a.n_samples(), a.sample_period(), samples, plaintexts, a.key().copied(), label)
}

/// Inverse of [`interleave`]: even rows, then odd rows.
pub fn deinterleave(ts: &TraceSet) -> Result<(TraceSet, TraceSet), TraceError> {
    let pick = |parity: usize| {
        let rows: Vec<usize> = (parity..ts.n_traces()).step_by(2).collect();
        let mut samples = Vec::with_capacity(rows.len() * ts.n_samples());
        for &i in &rows {
            samples.extend_from_slice(ts.trace(i));
        }
        let pts = rows.iter().map(|&i| ts.plaintexts()[i]).collect();
        TraceSet::new(ts.n_samples(), ts.sample_period(), samples, pts, ts.key().copied(), ts.label())
    };
    Ok((pick(0)?, pick(1)?))
}
