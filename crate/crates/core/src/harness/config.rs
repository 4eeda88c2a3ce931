//! Run configuration: a flat `key = value` file (TOML syntax, no tables).
//!
//! Every key is optional and defaults to the value in
//! [`RunConfig::default`]; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::schedule::{Schedule, ScheduleKind};
use super::tasks::{TaskKind, TaskSpec};
use crate::compression::CompressorKind;
use crate::error::{Error, Result};
use crate::optim::{HyperParams, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// quadratic | logistic | mlp | drift
    pub task: TaskKind,
    /// Layer count (quadratic) or feature-group count (drift).
    pub task_layers: usize,
    /// Elements per layer, or input features for logistic and mlp.
    pub task_dim: usize,
    pub samples: usize,
    /// Hidden units (mlp).
    pub hidden: usize,
    /// Curvature ratio between the last and first layer (quadratic).
    pub condition: f64,
    /// Standard deviation of target noise.
    pub noise: f64,
    /// Label flip probability (logistic).
    pub label_noise: f64,
    /// L2 penalty on the logistic weights.
    pub l2: f64,
    pub drift_step: usize,
    pub drift_scale: f64,

    /// lamb | onebit_lamb | lamb_basic_1bit | onebit_adam | adam
    #[serde(with = "optimizer_kind")]
    pub optimizer: OptimizerKind,
    /// onebit | identity
    #[serde(with = "compressor_kind")]
    pub compressor: CompressorKind,
    pub workers: usize,
    /// Samples per worker per step.
    pub batch_size: usize,
    /// Seeds the dataset and the initial parameters.
    pub seed: u64,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub eta: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub r_threshold: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub ratio_floor: f64,
    pub momentum_scaling: bool,
    pub rescale_error_feedback: bool,

    /// constant | linear | exponential
    pub schedule: ScheduleKind,
    pub schedule_warmup: usize,
    /// Initial multiplier of the exponential ramp.
    pub schedule_start: f64,
    pub decay_factor: f64,
    pub decay_every: usize,

    /// Bits per element of the uncompressed baseline.
    pub baseline_bits: u32,
    /// Record the error-compensation audit on every compressing call.
    pub audit: bool,
    /// Finite-difference probes run on the task before training.
    pub grad_check_probes: usize,
    /// Where metrics, trace, config and summary files go; nothing is
    /// written when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        let task = TaskSpec::default();
        Self {
            task: task.kind,
            task_layers: task.layers,
            task_dim: task.dim,
            samples: task.samples,
            hidden: task.hidden,
            condition: task.condition,
            noise: task.noise,
            label_noise: task.label_noise,
            l2: task.l2,
            drift_step: task.drift_step,
            drift_scale: task.drift_scale,
            optimizer: OptimizerKind::OneBitLamb,
            compressor: CompressorKind::OneBit,
            workers: 4,
            batch_size: 16,
            seed: 0,
            lr: hp.lr,
            beta1: hp.beta1,
            beta2: hp.beta2,
            beta3: hp.beta3,
            eta: hp.eta,
            c_min: hp.c_min,
            c_max: hp.c_max,
            r_min: hp.r_min,
            r_max: hp.r_max,
            r_threshold: hp.r_threshold,
            total_steps: hp.total_steps,
            warmup_steps: hp.warmup_steps,
            weight_decay: hp.weight_decay,
            ratio_floor: hp.ratio_floor,
            momentum_scaling: hp.momentum_scaling,
            rescale_error_feedback: hp.rescale_error_feedback,
            schedule: ScheduleKind::Constant,
            schedule_warmup: 0,
            schedule_start: 0.1,
            decay_factor: 0.9,
            decay_every: 100,
            baseline_bits: crate::comm::DEFAULT_BASELINE_BITS,
            audit: false,
            grad_check_probes: 10,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::ConfigParse {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            beta3: self.beta3,
            eta: self.eta,
            c_min: self.c_min,
            c_max: self.c_max,
            r_min: self.r_min,
            r_max: self.r_max,
            r_threshold: self.r_threshold,
            total_steps: self.total_steps,
            warmup_steps: self.warmup_steps,
            weight_decay: self.weight_decay,
            ratio_floor: self.ratio_floor,
            momentum_scaling: self.momentum_scaling,
            rescale_error_feedback: self.rescale_error_feedback,
        }
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec {
            kind: self.task,
            layers: self.task_layers,
            dim: self.task_dim,
            samples: self.samples,
            hidden: self.hidden,
            condition: self.condition,
            noise: self.noise,
            label_noise: self.label_noise,
            l2: self.l2,
            drift_step: self.drift_step,
            drift_scale: self.drift_scale,
            seed: self.seed,
        }
    }

    pub fn lr_schedule(&self) -> Schedule {
        Schedule {
            kind: self.schedule,
            warmup: self.schedule_warmup,
            start: self.schedule_start,
            decay_factor: self.decay_factor,
            decay_every: self.decay_every,
            total_steps: self.total_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let hp = self.hyper_params();
        hp.validate()?;
        if self.optimizer.is_two_stage() && self.warmup_steps == 0 {
            return Err(Error::Config(format!("{} needs warmup_steps >= 1", self.optimizer)));
        }
        if self.workers == 0 || self.batch_size == 0 {
            return Err(Error::Config("workers and batch_size must be positive".into()));
        }
        if self.baseline_bits == 0 {
            return Err(Error::Config("baseline_bits must be positive".into()));
        }
        self.task_spec().validate()?;
        self.lr_schedule().validate()
    }
}

mod optimizer_kind {
    use super::OptimizerKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(kind: &OptimizerKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(kind.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<OptimizerKind, D::Error> {
        let s = String::deserialize(d)?;
        OptimizerKind::parse(&s).map_err(serde::de::Error::custom)
    }
}

mod compressor_kind {
    use super::CompressorKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(kind: &CompressorKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(kind.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CompressorKind, D::Error> {
        let s = String::deserialize(d)?;
        CompressorKind::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown compressor {s:?}")))
    }
}
