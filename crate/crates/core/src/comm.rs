//! In-process simulation of an `n`-worker data-parallel cluster.
//!
//! The compressed allreduce runs in three phases over `n` chunks of the
//! input. Worker `j` acts as the server for chunk `j`:
//!
//! 1. gather: every worker compresses each chunk of its input against its own
//!    residual and sends chunk `j` to worker `j`;
//! 2. average: worker `j` averages the `n` decoded copies of chunk `j`, adds
//!    its server residual and compresses again;
//! 3. scatter: worker `j` sends the compressed average back to everyone.
//!
//! Phases run synchronously; there is no latency model. Every bit that would
//! cross a link is charged to the [`VolumeLedger`]; a worker's message to
//! itself is free.

use std::ops::Range;

use crate::compression::{compress_slice_with_feedback, CompressorKind, ErrorFeedback, Payload};
use crate::error::{Error, Result};
use crate::numerics::{inf_norm, l2_norm, DenseVector};

/// Bits per element of the uncompressed (FP16) baseline.
pub const DEFAULT_BASELINE_BITS: u32 = 16;

/// Cumulative communication volume, in bits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VolumeLedger {
    /// Worker-to-server traffic (reduce side).
    pub bits_gather: u64,
    /// Server-to-worker traffic (broadcast side).
    pub bits_scatter: u64,
    /// What the same messages would have cost at the baseline width.
    pub bits_uncompressed_equivalent: u64,
    pub compressed_collectives: u64,
    pub lossless_collectives: u64,
    /// Bits sent by compressed collectives only.
    pub compressed_bits: u64,
    /// Elements carried by compressed collectives only.
    pub compressed_elements: u64,
}

impl VolumeLedger {
    pub fn total_bits(&self) -> u64 {
        self.bits_gather + self.bits_scatter
    }

    /// Baseline volume over actual volume; 1 when nothing was sent.
    pub fn reduction_factor(&self) -> f64 {
        match self.total_bits() {
            0 => 1.0,
            sent => self.bits_uncompressed_equivalent as f64 / sent as f64,
        }
    }

    /// Average wire bits per element over compressed collectives.
    pub fn measured_bits_per_element(&self) -> Option<f64> {
        (self.compressed_elements > 0).then(|| self.compressed_bits as f64 / self.compressed_elements as f64)
    }
}

/// `1 / (w + (1 - w) * b_c / b_0)`: the volume reduction when a fraction `w`
/// of steps communicate at `b_0` bits per element and the rest at `b_c`.
pub fn volume_reduction(warmup_ratio: f64, baseline_bits: u32, compressed_bits_per_element: f64) -> f64 {
    1.0 / (warmup_ratio + (1.0 - warmup_ratio) * compressed_bits_per_element / baseline_bits as f64)
}

/// Chunk `j` covers `[j*k, min((j+1)*k, d))` with `k = ceil(d / n)`, i.e. the
/// input is conceptually zero padded to a multiple of `n` and the padding is
/// dropped. Trailing chunks may be empty.
pub fn chunk_ranges(d: usize, n: usize) -> Vec<Range<usize>> {
    let k = d.div_ceil(n.max(1));
    (0..n).map(|j| (j * k).min(d)..((j + 1) * k).min(d)).collect()
}

/// Running extremes for one compressing endpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EndpointStats {
    /// `max_t ||delta_t||_inf`
    pub max_delta_inf: f64,
    /// `max_t ||input_t + delta_{t-1}||_inf`
    pub max_compensated_inf: f64,
    /// `||delta||_2` after the latest call.
    pub last_delta_l2: f64,
}

/// Worst relative violation of `v + delta_prev == decoded + delta_new` seen
/// over every compressing call, measured per element against the largest
/// magnitude involved.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensationAudit {
    pub calls: u64,
    pub elements: u64,
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct SimCluster {
    n: usize,
    compressor: CompressorKind,
    baseline_bits: u32,
    dim: Option<usize>,
    worker_feedback: Vec<ErrorFeedback>,
    server_feedback: Vec<ErrorFeedback>,
    worker_stats: Vec<EndpointStats>,
    server_stats: Vec<EndpointStats>,
    ledger: VolumeLedger,
    audit: Option<CompensationAudit>,
    steps: u64,
}

impl SimCluster {
    pub fn new(n: usize, compressor: CompressorKind) -> Result<Self> {
        Self::with_baseline_bits(n, compressor, DEFAULT_BASELINE_BITS)
    }

    pub fn with_baseline_bits(n: usize, compressor: CompressorKind, baseline_bits: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("cluster needs at least one worker".into()));
        }
        if baseline_bits == 0 {
            return Err(Error::Config("baseline_bits must be positive".into()));
        }
        Ok(Self {
            n,
            compressor,
            baseline_bits,
            dim: None,
            worker_feedback: Vec::new(),
            server_feedback: Vec::new(),
            worker_stats: vec![EndpointStats::default(); n],
            server_stats: vec![EndpointStats::default(); n],
            ledger: VolumeLedger::default(),
            audit: None,
            steps: 0,
        })
    }

    /// Turns on per-call checking of the compensation identity.
    pub fn enable_audit(&mut self) {
        self.audit.get_or_insert_with(CompensationAudit::default);
    }

    pub fn audit(&self) -> Option<CompensationAudit> {
        self.audit
    }

    pub fn workers(&self) -> usize {
        self.n
    }

    pub fn compressor(&self) -> CompressorKind {
        self.compressor
    }

    pub fn baseline_bits(&self) -> u32 {
        self.baseline_bits
    }

    pub fn ledger(&self) -> &VolumeLedger {
        &self.ledger
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn worker_stats(&self) -> &[EndpointStats] {
        &self.worker_stats
    }

    pub fn server_stats(&self) -> &[EndpointStats] {
        &self.server_stats
    }

    pub fn worker_feedback(&self) -> &[ErrorFeedback] {
        &self.worker_feedback
    }

    /// Server residual for chunk `j`, held by worker `j`.
    pub fn server_feedback(&self) -> &[ErrorFeedback] {
        &self.server_feedback
    }

    /// Multiplies every carried residual elementwise by `factors`, given in
    /// full-vector coordinates. Server chunks take their slice.
    pub fn rescale_feedback(&mut self, factors: &[f64]) -> Result<()> {
        let Some(d) = self.dim else {
            return Ok(());
        };
        if factors.len() != d {
            return Err(Error::dim("SimCluster::rescale_feedback", d, factors.len()));
        }
        for fb in &mut self.worker_feedback {
            fb.rescale(factors)?;
        }
        for (fb, range) in self.server_feedback.iter_mut().zip(chunk_ranges(d, self.n)) {
            fb.rescale(&factors[range])?;
        }
        Ok(())
    }

    fn check_inputs<V: AsRef<[f64]>>(&self, inputs: &[V]) -> Result<usize> {
        if inputs.len() != self.n {
            return Err(Error::dim("allreduce worker count", self.n, inputs.len()));
        }
        let d = inputs[0].as_ref().len();
        for v in inputs {
            if v.as_ref().len() != d {
                return Err(Error::dim("allreduce input length", d, v.as_ref().len()));
            }
        }
        Ok(d)
    }

    fn ensure_buffers(&mut self, d: usize) -> Result<()> {
        match self.dim {
            Some(existing) if existing != d => Err(Error::dim("SimCluster error buffers", existing, d)),
            Some(_) => Ok(()),
            None => {
                self.dim = Some(d);
                self.worker_feedback = (0..self.n).map(|_| ErrorFeedback::new(d)).collect();
                self.server_feedback = chunk_ranges(d, self.n)
                    .into_iter()
                    .map(|r| ErrorFeedback::new(r.len()))
                    .collect();
                Ok(())
            }
        }
    }

    /// Exact elementwise mean, summed in ascending worker order.
    pub fn lossless_allreduce<V: AsRef<[f64]>>(&mut self, inputs: &[V]) -> Result<DenseVector> {
        let d = self.check_inputs(inputs)?;
        let mut out = vec![0.0; d];
        average_into(inputs.iter().map(|v| v.as_ref()), self.n, &mut out);

        // n-1 peers per chunk in each phase
        let bits = (self.n as u64 - 1) * d as u64 * self.baseline_bits as u64;
        self.ledger.bits_gather += bits;
        self.ledger.bits_scatter += bits;
        self.ledger.bits_uncompressed_equivalent += 2 * bits;
        self.ledger.lossless_collectives += 1;
        self.steps += 1;
        Ok(DenseVector::from_vec_unchecked(out))
    }

    /// Error-compensated chunked allreduce. Every worker receives the same
    /// vector.
    pub fn compressed_allreduce<V: AsRef<[f64]>>(&mut self, inputs: &[V]) -> Result<DenseVector> {
        let d = self.check_inputs(inputs)?;
        self.ensure_buffers(d)?;
        let n = self.n;
        let kind = self.compressor;
        let ranges = chunk_ranges(d, n);

        // gather: payloads[i][j] is worker i's compressed chunk j
        let mut payloads: Vec<Vec<Payload>> = Vec::with_capacity(n);
        for (i, input) in inputs.iter().enumerate() {
            let input = input.as_ref();
            let mut before = None;
            let delta_prev = self.worker_feedback[i].delta();
            let compensated_inf = compensated_inf_norm(input, delta_prev);
            if self.audit.is_some() {
                before = Some(delta_prev.to_vec());
            }
            let delta = self.worker_feedback[i].delta_mut();
            let mut row = Vec::with_capacity(n);
            for range in &ranges {
                row.push(compress_slice_with_feedback(
                    &input[range.clone()],
                    &mut delta[range.clone()],
                    kind,
                )?);
            }
            if let (Some(audit), Some(prev)) = (self.audit.as_mut(), before) {
                let mut decoded = vec![0.0; d];
                for (p, range) in row.iter().zip(&ranges) {
                    p.decompress_into(&mut decoded[range.clone()]);
                }
                record_audit(audit, input, &prev, &decoded, self.worker_feedback[i].delta());
            }
            update_stats(
                &mut self.worker_stats[i],
                compensated_inf,
                self.worker_feedback[i].delta(),
            );
            payloads.push(row);
        }

        // average + server compression
        let mut result = vec![0.0; d];
        for (j, range) in ranges.iter().enumerate() {
            if range.is_empty() {
                continue;
            }
            let len = range.len();
            let decoded: Vec<Vec<f64>> = payloads.iter().map(|row| row[j].decompress().into_vec()).collect();
            let mut avg = vec![0.0; len];
            average_into(decoded.iter().map(Vec::as_slice), n, &mut avg);

            let fb = &mut self.server_feedback[j];
            let prev = self.audit.is_some().then(|| fb.delta().to_vec());
            let compensated_inf = compensated_inf_norm(&avg, fb.delta());
            let out = fb.compress(&avg, kind)?;
            out.decompress_into(&mut result[range.clone()]);
            if let (Some(audit), Some(prev)) = (self.audit.as_mut(), prev) {
                record_audit(audit, &avg, &prev, &result[range.clone()], fb.delta());
            }
            update_stats(&mut self.server_stats[j], compensated_inf, fb.delta());

            // ledger: n-1 gather messages into server j, n-1 scatter messages out
            let peers = (n - 1) as u64;
            let gather_bits: u64 = payloads
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != j)
                .map(|(_, row)| row[j].bits(self.baseline_bits))
                .sum();
            let scatter_bits = peers * out.bits(self.baseline_bits);
            let baseline = peers * len as u64 * self.baseline_bits as u64;
            self.ledger.bits_gather += gather_bits;
            self.ledger.bits_scatter += scatter_bits;
            self.ledger.bits_uncompressed_equivalent += 2 * baseline;
            self.ledger.compressed_bits += gather_bits + scatter_bits;
            self.ledger.compressed_elements += 2 * peers * len as u64;
        }
        self.ledger.compressed_collectives += 1;
        self.steps += 1;
        Ok(DenseVector::from_vec_unchecked(result))
    }

    /// Sum of every endpoint's residual L2 norm after the latest call.
    pub fn total_delta_l2(&self) -> f64 {
        self.worker_stats
            .iter()
            .chain(&self.server_stats)
            .map(|s| s.last_delta_l2)
            .sum()
    }
}

fn compensated_inf_norm(v: &[f64], delta: &[f64]) -> f64 {
    v.iter().zip(delta).fold(0.0_f64, |acc, (a, b)| acc.max((a + b).abs()))
}

fn update_stats(stats: &mut EndpointStats, compensated_inf: f64, delta: &[f64]) {
    stats.max_compensated_inf = stats.max_compensated_inf.max(compensated_inf);
    stats.max_delta_inf = stats.max_delta_inf.max(inf_norm(delta));
    stats.last_delta_l2 = l2_norm(delta);
}

fn record_audit(audit: &mut CompensationAudit, input: &[f64], delta_prev: &[f64], decoded: &[f64], delta_new: &[f64]) {
    audit.calls += 1;
    for i in 0..input.len() {
        let lhs = input[i] + delta_prev[i];
        let rhs = decoded[i] + delta_new[i];
        let scale = lhs.abs().max(decoded[i].abs()).max(delta_new[i].abs());
        let violation = if scale == 0.0 { 0.0 } else { (lhs - rhs).abs() / scale };
        audit.max_violation = audit.max_violation.max(violation);
    }
    audit.elements += input.len() as u64;
}

fn average_into<'a>(inputs: impl Iterator<Item = &'a [f64]>, n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for v in inputs {
        for (o, x) in out.iter_mut().zip(v) {
            *o += x;
        }
    }
    let inv = n as f64;
    out.iter_mut().for_each(|o| *o /= inv);
}
