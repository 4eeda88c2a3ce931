//! Momentum fusion and momentum scaling.
//!
//! All layers' momenta are laid out back to back in one buffer so a step
//! issues a single collective. Because 1-bit compression shares one scale
//! per chunk, layers whose momenta are much smaller than their neighbours'
//! would be swamped; fixed per-layer coefficients computed at the end of
//! warmup bring every layer to a common magnitude before compression and are
//! divided out afterwards.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::numerics::DenseVector;

/// Floor on a layer's momentum magnitude when computing its coefficient.
pub const MAGNITUDE_FLOOR: f64 = 1e-12;

/// Contiguous, non-overlapping spans in registration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    spans: Vec<Range<usize>>,
}

impl Layout {
    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut offset = 0;
        let spans = lengths
            .into_iter()
            .map(|len| {
                let span = offset..offset + len;
                offset += len;
                span
            })
            .collect();
        Self { spans }
    }

    pub fn spans(&self) -> &[Range<usize>] {
        &self.spans
    }

    pub fn offsets(&self) -> Vec<usize> {
        self.spans.iter().map(|s| s.start).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.spans.len()
    }

    pub fn total_len(&self) -> usize {
        self.spans.last().map_or(0, |s| s.end)
    }

    /// Expands one value per layer into one value per element.
    pub fn broadcast(&self, per_layer: &[f64]) -> Result<Vec<f64>> {
        if per_layer.len() != self.spans.len() {
            return Err(Error::dim("Layout::broadcast", self.spans.len(), per_layer.len()));
        }
        let mut out = Vec::with_capacity(self.total_len());
        for (span, value) in self.spans.iter().zip(per_layer) {
            out.extend(std::iter::repeat_n(*value, span.len()));
        }
        Ok(out)
    }
}

/// One buffer holding every layer, addressed per layer through its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedView {
    buffer: DenseVector,
    layout: Layout,
}

impl FusedView {
    pub fn fuse<V: AsRef<[f64]>>(layers: &[V]) -> Self {
        let layout = Layout::from_lengths(layers.iter().map(|l| l.as_ref().len()));
        let mut buffer = Vec::with_capacity(layout.total_len());
        for l in layers {
            buffer.extend_from_slice(l.as_ref());
        }
        Self {
            buffer: DenseVector::from_vec_unchecked(buffer),
            layout,
        }
    }

    pub fn from_parts(buffer: DenseVector, layout: Layout) -> Result<Self> {
        let mut expected = 0;
        for span in layout.spans() {
            if span.start != expected || span.end < span.start {
                return Err(Error::Corruption(format!(
                    "span {span:?} does not start at offset {expected}"
                )));
            }
            expected = span.end;
        }
        if expected != buffer.len() {
            return Err(Error::Corruption(format!(
                "layout covers {expected} elements but buffer holds {}",
                buffer.len()
            )));
        }
        Ok(Self { buffer, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_layers(&self) -> usize {
        self.layout.num_layers()
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.buffer[self.layout.spans[l].clone()]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.buffer[self.layout.spans[l].clone()]
    }

    pub fn buffer(&self) -> &[f64] {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut [f64] {
        &mut self.buffer
    }

    /// Replaces the whole buffer, e.g. with the output of a collective.
    pub fn replace_buffer(&mut self, buffer: DenseVector) -> Result<()> {
        if buffer.len() != self.buffer.len() {
            return Err(Error::Corruption(format!(
                "replacement buffer has {} elements, layout needs {}",
                buffer.len(),
                self.buffer.len()
            )));
        }
        self.buffer = buffer;
        Ok(())
    }

    pub fn unfuse(&self) -> Vec<DenseVector> {
        self.layout
            .spans()
            .iter()
            .map(|s| DenseVector::from(&self.buffer[s.clone()]))
            .collect()
    }

    pub fn apply_scaling(&mut self, scales: &MomentumScales) -> Result<()> {
        self.for_each_layer(scales, |x, c| *x *= c)
    }

    pub fn remove_scaling(&mut self, scales: &MomentumScales) -> Result<()> {
        self.for_each_layer(scales, |x, c| *x /= c)
    }

    fn for_each_layer(&mut self, scales: &MomentumScales, f: impl Fn(&mut f64, f64)) -> Result<()> {
        if scales.coeffs.len() != self.num_layers() {
            return Err(Error::dim("momentum scales", self.num_layers(), scales.coeffs.len()));
        }
        for (span, &c) in self.layout.spans.iter().zip(&scales.coeffs) {
            self.buffer[span.clone()].iter_mut().for_each(|x| f(x, c));
        }
        Ok(())
    }
}

/// Per-layer momentum coefficients, fixed once warmup ends.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumScales {
    coeffs: Vec<f64>,
    reference: f64,
}

impl MomentumScales {
    pub fn uniform(num_layers: usize) -> Self {
        Self {
            coeffs: vec![1.0; num_layers],
            reference: 1.0,
        }
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::Config("momentum scale coefficients must be positive".into()));
        }
        Ok(Self { coeffs, reference: 1.0 })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }
}

/// Mean absolute value of each layer (floored), their mean as the reference,
/// and `reference / magnitude` as each layer's coefficient.
pub fn compute_scales<V: AsRef<[f64]>>(layers: &[V]) -> MomentumScales {
    if layers.is_empty() {
        return MomentumScales::uniform(0);
    }
    let magnitudes: Vec<f64> = layers
        .iter()
        .map(|l| {
            let l = l.as_ref();
            let mean = if l.is_empty() {
                0.0
            } else {
                l.iter().map(|x| x.abs()).sum::<f64>() / l.len() as f64
            };
            mean.max(MAGNITUDE_FLOOR)
        })
        .collect();
    let reference = magnitudes.iter().sum::<f64>() / magnitudes.len() as f64;
    MomentumScales {
        coeffs: magnitudes.iter().map(|s| reference / s).collect(),
        reference,
    }
}
