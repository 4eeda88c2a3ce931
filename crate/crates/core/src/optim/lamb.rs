//! Uncompressed LAMB and the warmup stage of 1-bit LAMB.

use super::state::{check_grads, HyperParams, LayerReport, LayerState};
use crate::error::{Error, Result};
use crate::fusion::compute_scales;
use crate::numerics::{clip, ema_in_place, ema_sq_in_place, l2_norm};

/// `clip(||x|| / ||u||, c_min, c_max)`. A zero update gives `c_max` (or the
/// clipped value of 1 when the parameters are zero too); the coefficient is
/// immaterial then since the step is zero.
pub fn trust_ratio(x_norm: f64, u_norm: f64, hp: &HyperParams) -> Result<f64> {
    let raw = if u_norm > 0.0 {
        x_norm / u_norm
    } else if x_norm > 0.0 {
        hp.c_max
    } else {
        1.0
    };
    clip(raw, hp.c_min, hp.c_max)
}

/// One LAMB step on averaged gradients. Returns each layer's report.
pub fn lamb_step<G: AsRef<[f64]>>(
    layers: &mut [LayerState],
    grads: &[G],
    hp: &HyperParams,
    lr: f64,
    step: usize,
) -> Result<Vec<LayerReport>> {
    check_grads(layers, grads, step)?;
    let mut reports = Vec::with_capacity(layers.len());
    for (layer, g) in layers.iter_mut().zip(grads) {
        let g = g.as_ref();
        ema_in_place(&mut layer.m, g, hp.beta1)?;
        ema_sq_in_place(&mut layer.v, g, hp.beta2)?;
        let u: Vec<f64> = layer
            .m
            .iter()
            .zip(layer.v.iter())
            .zip(layer.x.iter())
            .map(|((m, v), x)| m / (v.sqrt() + hp.eta) + hp.weight_decay * x)
            .collect();
        let c = trust_ratio(l2_norm(&layer.x), l2_norm(&u), hp)?;
        for (x, u) in layer.x.iter_mut().zip(&u) {
            *x -= lr * c * u;
        }
        if !layer.x.is_finite() {
            return Err(Error::NonFinite {
                context: "parameters",
                step,
                layer: layer.name.clone(),
            });
        }
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

/// A LAMB step that also tracks the moving average of each layer's
/// coefficient. On the last warmup step the stage is finalized.
pub fn onebit_lamb_warmup_step<G: AsRef<[f64]>>(
    layers: &mut [LayerState],
    grads: &[G],
    hp: &HyperParams,
    lr: f64,
    step: usize,
) -> Result<Vec<LayerReport>> {
    if step >= hp.warmup_steps {
        return Err(Error::StageOrder(format!(
            "warmup step {step} requested but warmup ends at {}",
            hp.warmup_steps
        )));
    }
    let reports = lamb_step(layers, grads, hp, lr, step)?;
    for (layer, report) in layers.iter_mut().zip(&reports) {
        layer.c_avg = hp.beta3 * layer.c_avg + (1.0 - hp.beta3) * report.c;
    }
    if step + 1 == hp.warmup_steps {
        finalize_warmup(layers, hp.momentum_scaling);
    }
    Ok(reports)
}

/// Freezes the variance, snapshots the momentum for gradient
/// reconstruction and fixes the momentum scale coefficients.
pub fn finalize_warmup(layers: &mut [LayerState], momentum_scaling: bool) {
    let coeffs = if momentum_scaling {
        compute_scales(&layers.iter().map(|l| l.m.as_slice()).collect::<Vec<_>>())
            .coeffs()
            .to_vec()
    } else {
        vec![1.0; layers.len()]
    };
    for (layer, coeff) in layers.iter_mut().zip(coeffs) {
        layer.v_frozen = Some(layer.v.clone());
        layer.m_prev = Some(layer.m.clone());
        layer.scale_coeff = coeff;
        layer.r_prev = 1.0;
    }
}
