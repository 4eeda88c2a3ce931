//! Compression-stage steps.
//!
//! Every worker folds its local gradient into the shared momentum, the fused
//! and scaled momenta go through one compressed allreduce, and the result
//! becomes the new global momentum. What happens next depends on the
//! variant:
//!
//! - 1-bit LAMB reconstructs the averaged gradient from consecutive
//!   momenta, keeps a fresh variance, and derives each layer's coefficient
//!   from the frozen/fresh variance ratio, clipped relative to the previous
//!   ratio and then absolutely;
//! - the frozen-coefficient ablation reuses the warmup average as is;
//! - 1-bit Adam has no layerwise coefficient at all.

use super::state::{check_grads, HyperParams, LayerReport, LayerState};
use crate::comm::SimCluster;
use crate::error::{Error, Result};
use crate::fusion::{FusedView, Layout, MomentumScales};
use crate::numerics::{clip, inf_norm_of_ratio, l2_norm, DenseVector};

fn frozen(layer: &LayerState) -> Result<&DenseVector> {
    layer
        .v_frozen
        .as_ref()
        .ok_or_else(|| Error::StageOrder(format!("layer {} has no frozen variance; run warmup first", layer.name)))
}

fn check_compression_ready(layers: &[LayerState]) -> Result<()> {
    for layer in layers {
        frozen(layer)?;
        if layer.m_prev.is_none() {
            return Err(Error::StageOrder(format!(
                "layer {} has no momentum snapshot; run warmup first",
                layer.name
            )));
        }
    }
    Ok(())
}

/// Local momentum update on every worker followed by the compressed
/// allreduce of the fused, scaled momenta. Returns the global momentum per
/// layer; `layers` is not modified.
pub fn communicate_momentum<G: AsRef<[f64]>>(
    layers: &[LayerState],
    local_grads: &[Vec<G>],
    hp: &HyperParams,
    step: usize,
    cluster: &mut SimCluster,
) -> Result<Vec<DenseVector>> {
    if local_grads.len() != cluster.workers() {
        return Err(Error::dim(
            "local gradients per worker",
            cluster.workers(),
            local_grads.len(),
        ));
    }
    let scales = MomentumScales::from_coeffs(layers.iter().map(|l| l.scale_coeff).collect())?;
    let layout = Layout::from_lengths(layers.iter().map(LayerState::len));

    if hp.rescale_error_feedback {
        let factors: Vec<f64> = layers
            .iter()
            .map(|l| if l.c_last > 0.0 { l.c_last2 / l.c_last } else { 1.0 })
            .collect();
        cluster.rescale_feedback(&layout.broadcast(&factors)?)?;
    }

    let mut locals = Vec::with_capacity(local_grads.len());
    for grads in local_grads {
        check_grads(layers, grads, step)?;
        let mut view = FusedView::fuse(&layers.iter().map(|l| l.m.as_slice()).collect::<Vec<_>>());
        for (l, g) in grads.iter().enumerate() {
            for (m, g) in view.layer_mut(l).iter_mut().zip(g.as_ref()) {
                *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
            }
        }
        view.apply_scaling(&scales)?;
        locals.push(view);
    }

    let global = cluster.compressed_allreduce(&locals.iter().map(FusedView::buffer).collect::<Vec<_>>())?;
    let mut view = FusedView::from_parts(global, layout)?;
    view.remove_scaling(&scales)?;
    Ok(view.unfuse())
}

/// `(m_t - beta1 * m_{t-1}) / (1 - beta1)`
pub fn reconstruct_gradient(m: &[f64], m_prev: &[f64], beta1: f64) -> Vec<f64> {
    m.iter()
        .zip(m_prev)
        .map(|(m, p)| (m - beta1 * p) / (1.0 - beta1))
        .collect()
}

/// Relative clip around the previous ratio, then the absolute clip.
pub fn clip_ratio(raw: f64, r_prev: f64, hp: &HyperParams) -> Result<f64> {
    let relative = clip(raw, (1.0 - hp.r_threshold) * r_prev, (1.0 + hp.r_threshold) * r_prev)?;
    clip(relative, hp.r_min, hp.r_max)
}

fn apply_frozen_update(layer: &mut LayerState, lr: f64, c: f64, hp: &HyperParams, step: usize) -> Result<()> {
    let v_frozen = layer.v_frozen.as_ref().expect("checked by caller");
    for ((x, m), vf) in layer.x.iter_mut().zip(layer.m.iter()).zip(v_frozen.iter()) {
        let u = m / (vf.sqrt() + hp.eta) + hp.weight_decay * *x;
        *x -= lr * c * u;
    }
    if !layer.x.is_finite() {
        return Err(Error::NonFinite {
            context: "parameters",
            step,
            layer: layer.name.clone(),
        });
    }
    Ok(())
}

/// One compression-stage step of 1-bit LAMB.
pub fn onebit_lamb_compressed_step<G: AsRef<[f64]>>(
    layers: &mut [LayerState],
    local_grads: &[Vec<G>],
    hp: &HyperParams,
    lr: f64,
    step: usize,
    cluster: &mut SimCluster,
) -> Result<Vec<LayerReport>> {
    check_compression_ready(layers)?;
    let momenta = communicate_momentum(layers, local_grads, hp, step, cluster)?;
    let mut reports = Vec::with_capacity(layers.len());
    for (layer, m_t) in layers.iter_mut().zip(momenta) {
        let m_prev = std::mem::replace(&mut layer.m, m_t);
        let g = reconstruct_gradient(&layer.m, &m_prev, hp.beta1);
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "reconstructed gradient",
                step,
                layer: layer.name.clone(),
            });
        }
        layer.m_prev = Some(m_prev);
        for (v, g) in layer.v.iter_mut().zip(&g) {
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        }
        let raw = inf_norm_of_ratio(frozen(layer)?, &layer.v, hp.ratio_floor)?;
        let r = clip_ratio(raw, layer.r_prev, hp)?;
        let c = r * layer.c_avg;
        apply_frozen_update(layer, lr, c, hp, step)?;
        layer.r_prev = r;
        layer.push_coefficient(c);
        reports.push(LayerReport {
            c,
            r,
            ratio_raw: Some(raw),
            v_norm: l2_norm(&layer.v),
        });
    }
    Ok(reports)
}

/// Compression stage with variance and coefficient both frozen: the
/// coefficient is the warmup average and no fresh variance is kept.
pub fn lamb_basic_1bit_step<G: AsRef<[f64]>>(
    layers: &mut [LayerState],
    local_grads: &[Vec<G>],
    hp: &HyperParams,
    lr: f64,
    step: usize,
    cluster: &mut SimCluster,
) -> Result<Vec<LayerReport>> {
    check_compression_ready(layers)?;
    let momenta = communicate_momentum(layers, local_grads, hp, step, cluster)?;
    let mut reports = Vec::with_capacity(layers.len());
    for (layer, m_t) in layers.iter_mut().zip(momenta) {
        layer.m_prev = Some(std::mem::replace(&mut layer.m, m_t));
        let c = layer.c_avg;
        apply_frozen_update(layer, lr, c, hp, step)?;
        layer.push_coefficient(c);
        reports.push(LayerReport {
            c,
            r: 1.0,
            ratio_raw: None,
            v_norm: l2_norm(&layer.v),
        });
    }
    Ok(reports)
}

/// Compression stage of 1-bit Adam: frozen-variance momentum SGD.
pub fn onebit_adam_step<G: AsRef<[f64]>>(
    layers: &mut [LayerState],
    local_grads: &[Vec<G>],
    hp: &HyperParams,
    lr: f64,
    step: usize,
    cluster: &mut SimCluster,
) -> Result<Vec<LayerReport>> {
    check_compression_ready(layers)?;
    let momenta = communicate_momentum(layers, local_grads, hp, step, cluster)?;
    let mut reports = Vec::with_capacity(layers.len());
    for (layer, m_t) in layers.iter_mut().zip(momenta) {
        layer.m_prev = Some(std::mem::replace(&mut layer.m, m_t));
        apply_frozen_update(layer, lr, 1.0, hp, step)?;
        layer.push_coefficient(1.0);
        reports.push(LayerReport {
            c: 1.0,
            r: 1.0,
            ratio_raw: None,
            v_norm: l2_norm(&layer.v),
        });
    }
    Ok(reports)
}
