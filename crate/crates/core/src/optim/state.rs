use crate::error::{Error, Result};
use crate::numerics::{DenseVector, DEFAULT_RATIO_FLOOR};

/// Optimizer hyperparameters. Defaults are the BERT pre-training settings
/// (decays 0.9 / 0.999 / 0.9, coefficient bounds [0.01, 0.3], ratio bounds
/// [0.5, 4.0] with a 0.1 relative step).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Base learning rate; the harness schedule multiplies on top of it.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Decay of the warmup moving average of the scaling coefficient.
    pub beta3: f64,
    /// Added to the preconditioner denominator.
    pub eta: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub r_threshold: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    /// Lower bound on the fresh variance when forming frozen/fresh ratios.
    pub ratio_floor: f64,
    /// Equalize per-layer momentum magnitudes before compression.
    pub momentum_scaling: bool,
    /// Scale carried residuals by `c_{t-2} / c_{t-1}` before each
    /// compressed step. Off by default.
    pub rescale_error_feedback: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            beta3: 0.9,
            eta: 1e-6,
            c_min: 0.01,
            c_max: 0.3,
            r_min: 0.5,
            r_max: 4.0,
            r_threshold: 0.1,
            total_steps: 1000,
            warmup_steps: 150,
            weight_decay: 0.0,
            ratio_floor: DEFAULT_RATIO_FLOOR,
            momentum_scaling: true,
            rescale_error_feedback: false,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2), ("beta3", self.beta3)] {
            if !(0.0..1.0).contains(&beta) {
                return fail(format!("{name} must lie in [0, 1), got {beta}"));
            }
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return fail(format!("lr must be finite and nonnegative, got {}", self.lr));
        }
        if !(self.eta > 0.0) {
            return fail(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.c_min <= self.c_max) || self.c_min < 0.0 {
            return fail(format!(
                "need 0 <= c_min <= c_max, got [{}, {}]",
                self.c_min, self.c_max
            ));
        }
        if !(self.r_min <= self.r_max) || !(self.r_min > 0.0) {
            return fail(format!("need 0 < r_min <= r_max, got [{}, {}]", self.r_min, self.r_max));
        }
        if !(self.r_threshold > 0.0 && self.r_threshold < 1.0) {
            return fail(format!("r_threshold must lie in (0, 1), got {}", self.r_threshold));
        }
        if self.warmup_steps > self.total_steps {
            return fail(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be nonnegative, got {}", self.weight_decay));
        }
        if !(self.ratio_floor > 0.0) {
            return fail(format!("ratio_floor must be positive, got {}", self.ratio_floor));
        }
        Ok(())
    }
}

/// Per-tensor optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub name: String,
    pub x: DenseVector,
    pub m: DenseVector,
    pub v: DenseVector,
    /// Variance captured at the end of warmup.
    pub v_frozen: Option<DenseVector>,
    /// Moving average of the warmup scaling coefficient.
    pub c_avg: f64,
    /// Scaling ratio of the previous compressed step; starts at 1.
    pub r_prev: f64,
    /// Post-communication momentum of the previous step.
    pub m_prev: Option<DenseVector>,
    /// Momentum scale coefficient applied around compression.
    pub scale_coeff: f64,
    /// Scaling coefficient of the previous step and the one before.
    pub c_last: f64,
    pub c_last2: f64,
}

impl LayerState {
    pub fn new(name: impl Into<String>, x: DenseVector) -> Self {
        let d = x.len();
        Self {
            name: name.into(),
            x,
            m: DenseVector::zeros(d),
            v: DenseVector::zeros(d),
            v_frozen: None,
            c_avg: 0.0,
            r_prev: 1.0,
            m_prev: None,
            scale_coeff: 1.0,
            c_last: 0.0,
            c_last2: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub(crate) fn push_coefficient(&mut self, c: f64) {
        self.c_last2 = self.c_last;
        self.c_last = c;
    }
}

/// Which half of the two-stage schedule a step belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Warmup,
    Compression,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Warmup => "warmup",
            Stage::Compression => "compression",
        }
    }
}

/// Per-layer quantities emitted by one step.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    /// Scaling coefficient applied to the learning rate.
    pub c: f64,
    /// Scaling ratio after both clips; 1 outside the compression stage.
    pub r: f64,
    /// `||v_frozen / v||_inf` before clipping, when it was computed.
    pub ratio_raw: Option<f64>,
    pub v_norm: f64,
}

pub(crate) fn check_grads<G: AsRef<[f64]>>(layers: &[LayerState], grads: &[G], step: usize) -> Result<()> {
    if grads.len() != layers.len() {
        return Err(Error::dim("per-layer gradients", layers.len(), grads.len()));
    }
    for (layer, g) in layers.iter().zip(grads) {
        let g = g.as_ref();
        if g.len() != layer.len() {
            return Err(Error::dim("layer gradient", layer.len(), g.len()));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "gradient",
                step,
                layer: layer.name.clone(),
            });
        }
    }
    Ok(())
}
