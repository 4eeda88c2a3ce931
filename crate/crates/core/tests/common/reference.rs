#![allow(clippy::needless_range_loop)]
//! Straight-line single-process 1-bit LAMB with lossless communication.
//!
//! Written from the algorithm description alone, with plain loops and no
//! crate optimizer code, so it can serve as an oracle for the distributed
//! implementation.

pub struct RefParams {
    pub lr_base: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub eta: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub r_threshold: f64,
    pub warmup_steps: usize,
    pub floor: f64,
}

struct Layer {
    x: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    v_frozen: Vec<f64>,
    c_avg: f64,
    r: f64,
}

pub struct Reference {
    p: RefParams,
    layers: Vec<Layer>,
    t: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    x.max(lo).min(hi)
}

impl Reference {
    pub fn new(p: RefParams, init: Vec<Vec<f64>>) -> Self {
        let layers = init
            .into_iter()
            .map(|x| {
                let d = x.len();
                Layer {
                    x,
                    m: vec![0.0; d],
                    v: vec![0.0; d],
                    v_frozen: Vec::new(),
                    c_avg: 0.0,
                    r: 1.0,
                }
            })
            .collect();
        Self { p, layers, t: 0 }
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().map(|l| l.x.as_slice()).collect()
    }

    /// `grads` is the averaged gradient over all workers.
    pub fn step(&mut self, grads: &[Vec<f64>], lr: f64) {
        let p = &self.p;
        if self.t < p.warmup_steps {
            for (layer, g) in self.layers.iter_mut().zip(grads) {
                let mut u = vec![0.0; g.len()];
                for i in 0..g.len() {
                    layer.m[i] = p.beta1 * layer.m[i] + (1.0 - p.beta1) * g[i];
                    layer.v[i] = p.beta2 * layer.v[i] + (1.0 - p.beta2) * g[i] * g[i];
                    u[i] = layer.m[i] / (layer.v[i].sqrt() + p.eta);
                }
                let (xn, un) = (norm(&layer.x), norm(&u));
                let raw = if un > 0.0 {
                    xn / un
                } else if xn > 0.0 {
                    p.c_max
                } else {
                    1.0
                };
                let c = clamp(raw, p.c_min, p.c_max);
                for i in 0..g.len() {
                    layer.x[i] -= lr * c * u[i];
                }
                layer.c_avg = p.beta3 * layer.c_avg + (1.0 - p.beta3) * c;
                if self.t + 1 == p.warmup_steps {
                    layer.v_frozen = layer.v.clone();
                }
            }
        } else {
            for (layer, g) in self.layers.iter_mut().zip(grads) {
                let d = g.len();
                let m_new: Vec<f64> = (0..d).map(|i| p.beta1 * layer.m[i] + (1.0 - p.beta1) * g[i]).collect();
                let mut ratio: f64 = 0.0;
                for i in 0..d {
                    let rec = (m_new[i] - p.beta1 * layer.m[i]) / (1.0 - p.beta1);
                    layer.v[i] = p.beta2 * layer.v[i] + (1.0 - p.beta2) * rec * rec;
                    ratio = ratio.max(layer.v_frozen[i] / layer.v[i].max(p.floor));
                }
                let r = clamp(ratio, (1.0 - p.r_threshold) * layer.r, (1.0 + p.r_threshold) * layer.r);
                let r = clamp(r, p.r_min, p.r_max);
                let c = r * layer.c_avg;
                for i in 0..d {
                    layer.x[i] -= lr * c * m_new[i] / (layer.v_frozen[i].sqrt() + p.eta);
                }
                layer.m = m_new;
                layer.r = r;
            }
        }
        self.t += 1;
    }
}
