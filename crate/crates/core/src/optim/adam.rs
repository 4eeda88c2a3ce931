//! Adam without bias correction, and the warmup stage of 1-bit Adam.

use super::lamb::finalize_warmup;
use super::state::{check_grads, HyperParams, LayerReport, LayerState};
use crate::error::{Error, Result};
use crate::numerics::{ema_in_place, ema_sq_in_place, l2_norm};

pub fn adam_step<G: AsRef<[f64]>>(
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
        for ((x, m), v) in layer.x.iter_mut().zip(layer.m.iter()).zip(layer.v.iter()) {
            *x -= lr * (m / (v.sqrt() + hp.eta) + hp.weight_decay * *x);
        }
        if !layer.x.is_finite() {
            return Err(Error::NonFinite {
                context: "parameters",
                step,
                layer: layer.name.clone(),
            });
        }
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

/// Adam steps until the variance is frozen on the last warmup step.
/// Momentum scaling is not part of 1-bit Adam, so coefficients stay at 1.
pub fn onebit_adam_warmup_step<G: AsRef<[f64]>>(
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
    let reports = adam_step(layers, grads, hp, lr, step)?;
    if step + 1 == hp.warmup_steps {
        finalize_warmup(layers, false);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseVector;

    #[test]
    fn first_step_without_bias_correction() {
        let hp = HyperParams::default();
        let mut layers = vec![LayerState::new("w", DenseVector::from(&[1.0][..]))];
        adam_step(&mut layers, &[[0.5]], &hp, 0.1, 0).unwrap();
        // m = 0.05, v = 0.00025, u = 0.05 / (0.0158113883... + 1e-6)
        let u = 0.05 / (0.00025f64.sqrt() + 1e-6);
        assert!((layers[0].x[0] - (1.0 - 0.1 * u)).abs() < 1e-15);
        assert!((u - 3.1620).abs() < 1e-3);
    }

    #[test]
    fn warmup_freezes_with_unit_scales() {
        let hp = HyperParams {
            warmup_steps: 2,
            ..HyperParams::default()
        };
        let mut layers = vec![
            LayerState::new("a", DenseVector::from(&[1.0][..])),
            LayerState::new("b", DenseVector::from(&[1.0][..])),
        ];
        for t in 0..2 {
            onebit_adam_warmup_step(&mut layers, &[[1e-4], [10.0]], &hp, 0.01, t).unwrap();
        }
        assert!(layers.iter().all(|l| l.scale_coeff == 1.0 && l.v_frozen.is_some()));
        assert!(onebit_adam_warmup_step(&mut layers, &[[1.0], [1.0]], &hp, 0.01, 2).is_err());
    }
}
