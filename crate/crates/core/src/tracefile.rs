//! Binary trace file format (little-endian):
//!
//! ```text
//! magic "TVTF" | version u16 | flags u16 | n_traces u32 | n_samples u32
//! sample_period f64
//! key [u8; 16]                      (flags bit 0)
//! label_len u16, label utf-8 bytes  (flags bit 1)
//! plaintexts n_traces x [u8; 16]
//! samples n_traces x n_samples f32, row-major
//! ```
//!
//! Files written without a label are exactly the base layout; bit 1 is an
//! optional extension that lets the label survive a round trip.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::TraceError;
use crate::trace::{Block, TraceSet, BLOCK_BYTES};

pub const MAGIC: [u8; 4] = *b"TVTF";
pub const FORMAT_VERSION: u16 = 1;
pub const FLAG_KEY: u16 = 1 << 0;
pub const FLAG_LABEL: u16 = 1 << 1;
const KNOWN_FLAGS: u16 = FLAG_KEY | FLAG_LABEL;

pub fn encode(ts: &TraceSet) -> Vec<u8> {
    let label = ts.label().as_bytes();
    let label = &label[..label.len().min(u16::MAX as usize)];
    let mut flags = 0u16;
    if ts.key().is_some() {
        flags |= FLAG_KEY;
    }
    if !label.is_empty() {
        flags |= FLAG_LABEL;
    }
    let mut out = Vec::with_capacity(
        24 + 18 + label.len() + ts.n_traces() * (BLOCK_BYTES + 4 * ts.n_samples()),
    );
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(ts.n_traces() as u32).to_le_bytes());
    out.extend_from_slice(&(ts.n_samples() as u32).to_le_bytes());
    out.extend_from_slice(&ts.sample_period().to_le_bytes());
    if let Some(key) = ts.key() {
        out.extend_from_slice(key);
    }
    if !label.is_empty() {
        out.extend_from_slice(&(label.len() as u16).to_le_bytes());
        out.extend_from_slice(label);
    }
    for pt in ts.plaintexts() {
        out.extend_from_slice(pt);
    }
    for v in ts.samples() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TraceError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(TraceError::Truncated {
                needed: end,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, TraceError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, TraceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, TraceError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<TraceSet, TraceError> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(TraceError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(TraceError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let flags = r.u16()?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(TraceError::UnknownFlags(flags & !KNOWN_FLAGS));
    }
    let n_traces = r.u32()? as usize;
    let n_samples = r.u32()? as usize;
    let sample_period = r.f64()?;
    if n_traces == 0 || n_samples == 0 {
        return Err(TraceError::Empty(format!(
            "header declares {n_traces} traces of {n_samples} samples"
        )));
    }
    let key = if flags & FLAG_KEY != 0 {
        Some(Block::try_from(r.take(BLOCK_BYTES)?).unwrap())
    } else {
        None
    };
    let label = if flags & FLAG_LABEL != 0 {
        let len = r.u16()? as usize;
        String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| TraceError::DimensionMismatch("label is not valid UTF-8".into()))?
    } else {
        String::new()
    };

    let payload = n_traces
        .checked_mul(BLOCK_BYTES + 4 * n_samples)
        .ok_or_else(|| TraceError::DimensionMismatch("header dimensions overflow".into()))?;
    let remaining = buf.len() - r.pos;
    if remaining < payload {
        return Err(TraceError::Truncated {
            needed: r.pos + payload,
            available: buf.len(),
        });
    }
    if remaining > payload {
        return Err(TraceError::DimensionMismatch(format!(
            "{} trailing bytes after {n_traces} x {n_samples} payload",
            remaining - payload
        )));
    }
    let plaintexts = r
        .take(n_traces * BLOCK_BYTES)?
        .chunks_exact(BLOCK_BYTES)
        .map(|c| Block::try_from(c).unwrap())
        .collect();
    let samples = r
        .take(n_traces * n_samples * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TraceSet::new(n_samples, sample_period, samples, plaintexts, key, label)
}

pub fn write_trace_set(ts: &TraceSet, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    fs::write(path, encode(ts)).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_trace_set(path: impl AsRef<Path>) -> Result<TraceSet, TraceError> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&buf)
}

/// 32 lowercase hex digits.
pub fn hex_block(block: &Block) -> String {
    block.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses exactly 32 hex digits.
pub fn parse_hex_block(s: &str) -> Option<Block> {
    if s.len() != 2 * BLOCK_BYTES || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; BLOCK_BYTES];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

/// One row per trace: plaintext hex, then every sample. Samples use the
/// shortest representation that parses back to the same `f32`.
pub fn write_csv(ts: &TraceSet, mut w: impl Write) -> std::io::Result<()> {
    write!(w, "plaintext")?;
    for s in 0..ts.n_samples() {
        write!(w, ",s{s}")?;
    }
    writeln!(w)?;
    for (row, pt) in ts.rows().zip(ts.plaintexts()) {
        write!(w, "{}", hex_block(pt))?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn export_csv(ts: &TraceSet, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let io_err = |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    write_csv(ts, &mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

/// Parses the CSV produced by [`write_csv`]. The CSV carries no timing or
/// key metadata, so those are supplied by the caller.
pub fn parse_csv(
    text: &str,
    sample_period: f64,
    key: Option<Block>,
    label: &str,
) -> Result<TraceSet, TraceError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(TraceError::Csv {
        line: 1,
        reason: "empty file".into(),
    })?;
    let n_samples = header.split(',').count().saturating_sub(1);
    let mut plaintexts = Vec::new();
    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut fields = line.split(',');
        let pt = fields
            .next()
            .and_then(|f| parse_hex_block(f.trim()))
            .ok_or_else(|| TraceError::Csv {
                line: line_no,
                reason: "first column must be 32 hex digits".into(),
            })?;
        let before = samples.len();
        for f in fields {
            let v: f32 = f.trim().parse().map_err(|_| TraceError::Csv {
                line: line_no,
                reason: format!("bad sample {f:?}"),
            })?;
            samples.push(v);
        }
        if samples.len() - before != n_samples {
            return Err(TraceError::Csv {
                line: line_no,
                reason: format!(
                    "expected {n_samples} samples, found {}",
                    samples.len() - before
                ),
            });
        }
        plaintexts.push(pt);
    }
    TraceSet::new(n_samples, sample_period, samples, plaintexts, key, label)
}
