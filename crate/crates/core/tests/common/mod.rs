#![allow(dead_code)]

pub mod reference;

use onebit_lamb::harness::{RunConfig, TaskKind};
use onebit_lamb::optim::OptimizerKind;

/// n = 4, T = 2000, T_w = 300 with the 1-bit compressor.
pub fn parity_config(task: TaskKind, optimizer: OptimizerKind, seed: u64) -> RunConfig {
    let base = RunConfig {
        task,
        optimizer,
        workers: 4,
        batch_size: 16,
        total_steps: 2000,
        warmup_steps: 300,
        seed,
        ..RunConfig::default()
    };
    match task {
        TaskKind::Quadratic => RunConfig {
            noise: 0.2,
            lr: 0.02,
            ..base
        },
        TaskKind::Logistic => RunConfig {
            label_noise: 0.05,
            lr: 0.01,
            ..base
        },
        _ => base,
    }
}

/// Feature groups shrink to a quarter at step 400, so the last layer's
/// gradient second moment drops 16x during the compression stage.
pub fn drift_config(optimizer: OptimizerKind, seed: u64) -> RunConfig {
    RunConfig {
        task: TaskKind::Drift,
        optimizer,
        workers: 4,
        batch_size: 16,
        total_steps: 2000,
        warmup_steps: 300,
        noise: 0.05,
        drift_step: 400,
        drift_scale: 0.25,
        lr: 0.01,
        seed,
        ..RunConfig::default()
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `y` against `0, 1, 2, ...`.
pub fn slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in y.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut s, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        s += (x - ma) * (y - mb);
        sa += (x - ma) * (x - ma);
        sb += (y - mb) * (y - mb);
    }
    s / (sa * sb).sqrt()
}

/// `||a - b|| / max(||b||, tiny)`
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den = b.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}
