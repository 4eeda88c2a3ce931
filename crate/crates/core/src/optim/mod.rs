//! Optimizers and the distributed driver that runs them on a [`SimCluster`].

mod adam;
mod lamb;
mod onebit;
mod state;

pub use adam::{adam_step, onebit_adam_warmup_step};
pub use lamb::{finalize_warmup, lamb_step, onebit_lamb_warmup_step, trust_ratio};
pub use onebit::{
    clip_ratio, communicate_momentum, lamb_basic_1bit_step, onebit_adam_step, onebit_lamb_compressed_step,
    reconstruct_gradient,
};
pub use state::{HyperParams, LayerReport, LayerState, Stage};

use crate::comm::SimCluster;
use crate::error::{Error, Result};
use crate::fusion::{FusedView, Layout};
use crate::numerics::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Lamb,
    OneBitLamb,
    /// 1-bit communication with the variance and coefficient frozen.
    LambBasic1Bit,
    OneBitAdam,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Lamb,
        OptimizerKind::OneBitLamb,
        OptimizerKind::LambBasic1Bit,
        OptimizerKind::OneBitAdam,
        OptimizerKind::Adam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Lamb => "lamb",
            OptimizerKind::OneBitLamb => "onebit_lamb",
            OptimizerKind::LambBasic1Bit => "lamb_basic_1bit",
            OptimizerKind::OneBitAdam => "onebit_adam",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown optimizer {s:?}")))
    }

    /// Whether the kind switches to compressed communication after warmup.
    pub fn is_two_stage(self) -> bool {
        matches!(
            self,
            OptimizerKind::OneBitLamb | OptimizerKind::LambBasic1Bit | OptimizerKind::OneBitAdam
        )
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub stage: Stage,
    pub layers: Vec<LayerReport>,
}

/// Optimizer state replicated on every worker plus the simulated cluster.
///
/// Since all workers apply the same averaged update, a single copy of the
/// parameters stands in for all of them.
#[derive(Debug, Clone)]
pub struct DistributedOptimizer {
    kind: OptimizerKind,
    hp: HyperParams,
    layers: Vec<LayerState>,
    cluster: SimCluster,
    step: usize,
}

impl DistributedOptimizer {
    pub fn new(
        kind: OptimizerKind,
        hp: HyperParams,
        params: Vec<(String, DenseVector)>,
        cluster: SimCluster,
    ) -> Result<Self> {
        hp.validate()?;
        if kind.is_two_stage() && hp.warmup_steps == 0 {
            return Err(Error::Config(format!("{kind} needs at least one warmup step")));
        }
        if params.is_empty() {
            return Err(Error::Config("no parameters registered".into()));
        }
        let layers = params
            .into_iter()
            .map(|(name, x)| {
                if x.is_finite() {
                    Ok(LayerState::new(name, x))
                } else {
                    Err(Error::NonFinite {
                        context: "initial parameters",
                        step: 0,
                        layer: name,
                    })
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            kind,
            hp,
            layers,
            cluster,
            step: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn layers(&self) -> &[LayerState] {
        &self.layers
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().map(|l| l.x.as_slice()).collect()
    }

    pub fn cluster(&self) -> &SimCluster {
        &self.cluster
    }

    pub fn cluster_mut(&mut self) -> &mut SimCluster {
        &mut self.cluster
    }

    /// Number of steps taken so far.
    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn stage_at(&self, step: usize) -> Stage {
        if self.kind.is_two_stage() && step >= self.hp.warmup_steps {
            Stage::Compression
        } else {
            Stage::Warmup
        }
    }

    /// Advances one step. `local_grads[i][l]` is worker `i`'s gradient for
    /// layer `l`; `lr` is the scheduled learning rate for this step.
    pub fn step<G: AsRef<[f64]>>(&mut self, local_grads: &[Vec<G>], lr: f64) -> Result<StepReport> {
        let step = self.step;
        let stage = self.stage_at(step);
        let (hp, layers, cluster) = (&self.hp, &mut self.layers, &mut self.cluster);
        let reports = match stage {
            Stage::Warmup => {
                let avg = average_gradients(layers, local_grads, cluster, step)?;
                match self.kind {
                    OptimizerKind::Lamb => lamb_step(layers, &avg, hp, lr, step)?,
                    OptimizerKind::Adam => adam_step(layers, &avg, hp, lr, step)?,
                    OptimizerKind::OneBitLamb | OptimizerKind::LambBasic1Bit => {
                        onebit_lamb_warmup_step(layers, &avg, hp, lr, step)?
                    }
                    OptimizerKind::OneBitAdam => onebit_adam_warmup_step(layers, &avg, hp, lr, step)?,
                }
            }
            Stage::Compression => match self.kind {
                OptimizerKind::OneBitLamb => onebit_lamb_compressed_step(layers, local_grads, hp, lr, step, cluster)?,
                OptimizerKind::LambBasic1Bit => lamb_basic_1bit_step(layers, local_grads, hp, lr, step, cluster)?,
                OptimizerKind::OneBitAdam => onebit_adam_step(layers, local_grads, hp, lr, step, cluster)?,
                OptimizerKind::Lamb | OptimizerKind::Adam => unreachable!("single-stage kinds never compress"),
            },
        };
        self.step += 1;
        Ok(StepReport {
            step,
            stage,
            layers: reports,
        })
    }
}

/// Fuses each worker's gradients and averages them with one lossless
/// collective.
fn average_gradients<G: AsRef<[f64]>>(
    layers: &[LayerState],
    local_grads: &[Vec<G>],
    cluster: &mut SimCluster,
    step: usize,
) -> Result<Vec<DenseVector>> {
    if local_grads.len() != cluster.workers() {
        return Err(Error::dim(
            "local gradients per worker",
            cluster.workers(),
            local_grads.len(),
        ));
    }
    let mut fused = Vec::with_capacity(local_grads.len());
    for grads in local_grads {
        state::check_grads(layers, grads, step)?;
        fused.push(FusedView::fuse(grads));
    }
    let avg = cluster.lossless_allreduce(&fused.iter().map(FusedView::buffer).collect::<Vec<_>>())?;
    let layout = Layout::from_lengths(layers.iter().map(LayerState::len));
    Ok(FusedView::from_parts(avg, layout)?.unfuse())
}
