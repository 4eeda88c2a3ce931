//! Error-compensated compression.
//!
//! The 1-bit compressor keeps the sign of every element and a single scale,
//! the mean absolute value of the input. The identity compressor passes
//! values through untouched and serves as an exactness oracle: with it every
//! compressed path must collapse to its lossless counterpart.
//!
//! Compensation residuals live in [`ErrorFeedback`]. For any call
//! `out = compress_with_feedback(v, fb)` the identity
//! `v + delta_prev == decompress(out) + delta_new` holds to rounding.

use crate::error::{Error, Result};
use crate::numerics::{check_len, DenseVector};

/// Bits charged for the per-block scale on the wire.
pub const SCALE_BITS: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum CompressorKind {
    #[default]
    OneBit,
    Identity,
}

impl CompressorKind {
    pub fn name(self) -> &'static str {
        match self {
            CompressorKind::OneBit => "onebit",
            CompressorKind::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "onebit" | "1bit" => Some(CompressorKind::OneBit),
            "identity" | "none" => Some(CompressorKind::Identity),
            _ => None,
        }
    }
}

/// Signs packed LSB-first (bit `i` lives in byte `i / 8` at position
/// `i % 8`, set means nonnegative) plus one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedBlock {
    signs: Vec<u8>,
    scale: f64,
    len: usize,
}

impl CompressedBlock {
    pub fn from_parts(signs: Vec<u8>, scale: f64, len: usize) -> Result<Self> {
        if signs.len() != len.div_ceil(8) {
            return Err(Error::Decode(format!(
                "{} sign bytes cannot hold {len} elements",
                signs.len()
            )));
        }
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::Decode(format!("invalid scale {scale}")));
        }
        Ok(Self { signs, scale, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sign_bytes(&self) -> &[u8] {
        &self.signs
    }

    /// True when element `i` decodes to `+scale`.
    pub fn sign(&self, i: usize) -> bool {
        self.signs[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn decompress(&self) -> DenseVector {
        let mut out = vec![0.0; self.len];
        self.decompress_into(&mut out);
        DenseVector::from_vec_unchecked(out)
    }

    pub fn decompress_into(&self, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.len);
        if self.scale == 0.0 {
            out.fill(0.0);
            return;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = if self.sign(i) { self.scale } else { -self.scale };
        }
    }

    /// Wire size: one bit per element plus a 32-bit scale.
    pub fn bits(&self) -> u64 {
        compressed_bits(self.len)
    }

    /// Byte layout: `ceil(len / 8)` sign bytes (LSB-first, zero padded),
    /// then the scale as a little-endian IEEE-754 binary32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.signs.len() + 4);
        out.extend_from_slice(&self.signs);
        out.extend_from_slice(&(self.scale as f32).to_le_bytes());
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes). The element count is not part
    /// of the layout and must be supplied. The scale comes back rounded to
    /// binary32.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Result<Self> {
        let sign_len = len.div_ceil(8);
        if bytes.len() != sign_len + 4 {
            return Err(Error::Decode(format!(
                "expected {} bytes for {len} elements, got {}",
                sign_len + 4,
                bytes.len()
            )));
        }
        let signs = bytes[..sign_len].to_vec();
        let tail_bits = len % 8;
        if tail_bits != 0 && signs[sign_len - 1] >> tail_bits != 0 {
            return Err(Error::Decode("nonzero padding bits".into()));
        }
        let raw: [u8; 4] = bytes[sign_len..].try_into().expect("length checked");
        let scale = f32::from_le_bytes(raw) as f64;
        Self::from_parts(signs, scale, len)
    }
}

/// Number of wire bits for a 1-bit block of `len` elements.
pub fn compressed_bits(len: usize) -> u64 {
    len as u64 + SCALE_BITS
}

/// Sign of each element (zero encodes as nonnegative) and the mean absolute
/// value as the scale.
pub fn compress_1bit(v: &[f64]) -> CompressedBlock {
    let mut signs = vec![0u8; v.len().div_ceil(8)];
    let mut abs_sum = 0.0;
    for (i, x) in v.iter().enumerate() {
        if *x >= 0.0 {
            signs[i / 8] |= 1 << (i % 8);
        }
        abs_sum += x.abs();
    }
    let scale = if v.is_empty() { 0.0 } else { abs_sum / v.len() as f64 };
    CompressedBlock {
        signs,
        scale,
        len: v.len(),
    }
}

pub fn decompress(block: &CompressedBlock) -> DenseVector {
    block.decompress()
}

/// What a compressing endpoint puts on the wire.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Signs(CompressedBlock),
    /// Uncompressed values from the identity compressor.
    Dense(DenseVector),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Signs(b) => b.len(),
            Payload::Dense(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn decompress(&self) -> DenseVector {
        match self {
            Payload::Signs(b) => b.decompress(),
            Payload::Dense(v) => v.clone(),
        }
    }

    pub fn decompress_into(&self, out: &mut [f64]) {
        match self {
            Payload::Signs(b) => b.decompress_into(out),
            Payload::Dense(v) => out.copy_from_slice(v),
        }
    }

    /// Wire bits; dense payloads are charged `baseline_bits` per element.
    pub fn bits(&self, baseline_bits: u32) -> u64 {
        match self {
            Payload::Signs(b) => b.bits(),
            Payload::Dense(v) => v.len() as u64 * baseline_bits as u64,
        }
    }
}

impl CompressorKind {
    pub fn compress(self, v: &[f64]) -> Payload {
        match self {
            CompressorKind::OneBit => Payload::Signs(compress_1bit(v)),
            CompressorKind::Identity => Payload::Dense(DenseVector::from(v)),
        }
    }
}

/// Residual carried by one compressing endpoint. Starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorFeedback {
    delta: DenseVector,
}

impl ErrorFeedback {
    pub fn new(len: usize) -> Self {
        Self {
            delta: DenseVector::zeros(len),
        }
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// Chunked compression works on windows of one residual buffer.
    pub(crate) fn delta_mut(&mut self) -> &mut [f64] {
        &mut self.delta
    }

    pub fn len(&self) -> usize {
        self.delta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delta.is_empty()
    }

    /// Multiplies the carried residual elementwise by `factors`.
    pub fn rescale(&mut self, factors: &[f64]) -> Result<()> {
        check_len("ErrorFeedback::rescale", self.delta.len(), factors.len())?;
        for (d, f) in self.delta.iter_mut().zip(factors) {
            *d *= f;
        }
        Ok(())
    }

    pub fn compress(&mut self, v: &[f64], kind: CompressorKind) -> Result<Payload> {
        compress_slice_with_feedback(v, &mut self.delta, kind)
    }
}

/// `C[v + delta]`, replacing `delta` with `v + delta - decompress(C[..])`.
pub fn compress_with_feedback(v: &[f64], fb: &mut ErrorFeedback, kind: CompressorKind) -> Result<Payload> {
    fb.compress(v, kind)
}

/// Slice form of [`compress_with_feedback`]; `delta` is a window into a
/// larger residual buffer.
pub fn compress_slice_with_feedback(v: &[f64], delta: &mut [f64], kind: CompressorKind) -> Result<Payload> {
    check_len("compress_with_feedback", delta.len(), v.len())?;
    let compensated: Vec<f64> = v.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
    let payload = kind.compress(&compensated);
    match &payload {
        Payload::Dense(_) => delta.fill(0.0),
        Payload::Signs(block) => {
            let s = block.scale();
            for (i, (d, c)) in delta.iter_mut().zip(&compensated).enumerate() {
                let decoded = if s == 0.0 {
                    0.0
                } else if block.sign(i) {
                    s
                } else {
                    -s
                };
                *d = c - decoded;
            }
        }
    }
    Ok(payload)
}
