//! The training-task interface, data sharding and the finite-difference
//! gradient check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::DenseVector;

/// Relative tolerance of the finite-difference check.
pub const GRAD_CHECK_RTOL: f64 = 1e-5;
/// Absolute floor of the check, for directional derivatives near zero.
pub const GRAD_CHECK_ATOL: f64 = 1e-9;
const FD_STEP: f64 = 1e-5;

/// A differentiable objective over a fixed synthetic dataset.
///
/// Losses are means over the batch, so the average of equal-sized shard
/// gradients is the gradient of the union. `step` lets a task change over
/// time; most ignore it.
pub trait Task: Send + Sync {
    fn name(&self) -> &str;
    /// Named layers in registration order with their element counts.
    fn layers(&self) -> Vec<(String, usize)>;
    fn init_params(&self) -> Vec<DenseVector>;
    fn num_samples(&self) -> usize;
    fn loss(&self, params: &[&[f64]], batch: &[usize], step: usize) -> f64;
    fn grad(&self, params: &[&[f64]], batch: &[usize], step: usize) -> Vec<DenseVector>;

    fn full_loss(&self, params: &[&[f64]], step: usize) -> f64 {
        let all: Vec<usize> = (0..self.num_samples()).collect();
        self.loss(params, &all, step)
    }
}

/// Per-worker batches for one step.
///
/// The global batch at `step` is the `n * per_worker` consecutive sample
/// indices starting at `step * n * per_worker`, wrapping around the dataset;
/// worker `i` takes the `i`-th contiguous slice of it.
pub fn shard_batch(num_samples: usize, step: usize, n_workers: usize, per_worker: usize) -> Vec<Vec<usize>> {
    let global = n_workers * per_worker;
    let start = (step as u128 * global as u128 % num_samples.max(1) as u128) as usize;
    (0..n_workers)
        .map(|i| {
            (i * per_worker..(i + 1) * per_worker)
                .map(|k| (start + k) % num_samples.max(1))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub probes: usize,
    /// Largest `|analytic - numeric| / (rtol * (|a| + |b|) + atol)`; the
    /// check passes when this is at most 1.
    pub worst_ratio: f64,
}

/// Compares the analytic directional derivative with a central finite
/// difference along random unit directions at randomly perturbed points.
pub fn gradient_check(task: &dyn Task, probes: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = task.init_params();
    let n = task.num_samples();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let x: Vec<Vec<f64>> = base
            .iter()
            .map(|l| {
                l.iter()
                    .map(|v| v + 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut dir: Vec<Vec<f64>> = x
            .iter()
            .map(|l| l.iter().map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let norm = dir.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().flatten().for_each(|v| *v /= norm);
        let batch: Vec<usize> = (0..8.min(n)).map(|_| rng.random_range(0..n)).collect();
        let step = rng.random_range(0..4096);

        let shifted = |sign: f64| -> Vec<Vec<f64>> {
            let mut out = x.clone();
            for (o, d) in out.iter_mut().zip(&dir) {
                for (o, d) in o.iter_mut().zip(d) {
                    *o += sign * FD_STEP * d;
                }
            }
            out
        };
        let plus = shifted(1.0);
        let minus = shifted(-1.0);
        let f = |p: &[Vec<f64>]| task.loss(&p.iter().map(Vec::as_slice).collect::<Vec<_>>(), &batch, step);
        let numeric = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        let grad = task.grad(&x.iter().map(Vec::as_slice).collect::<Vec<_>>(), &batch, step);
        let analytic: f64 = grad
            .iter()
            .zip(&dir)
            .map(|(g, d)| g.iter().zip(d).map(|(g, d)| g * d).sum::<f64>())
            .sum();
        let bound = GRAD_CHECK_RTOL * (analytic.abs() + numeric.abs()) + GRAD_CHECK_ATOL;
        let ratio = (analytic - numeric).abs() / bound;
        if !(ratio <= 1.0) {
            return Err(Error::GradientCheck {
                task: task.name().to_string(),
                error: (analytic - numeric).abs(),
                tolerance: bound,
            });
        }
        worst = worst.max(ratio);
    }
    Ok(GradCheckReport {
        probes,
        worst_ratio: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_workers_split_the_global_batch() {
        assert_eq!(shard_batch(100, 0, 2, 4), vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7]]);
        assert_eq!(shard_batch(100, 0, 1, 8), vec![(0..8).collect::<Vec<_>>()]);
    }

    #[test]
    fn batches_advance_and_wrap() {
        assert_eq!(shard_batch(10, 1, 2, 2), vec![vec![4, 5], vec![6, 7]]);
        assert_eq!(shard_batch(10, 2, 2, 2), vec![vec![8, 9], vec![0, 1]]);
    }

    #[test]
    fn shards_are_disjoint_and_cover_the_global_batch() {
        for step in 0..20 {
            let shards = shard_batch(97, step, 4, 6);
            let mut all: Vec<usize> = shards.concat();
            assert_eq!(all.len(), 24);
            all.sort_unstable();
            all.dedup();
            assert_eq!(all.len(), 24);
        }
    }

    struct Broken;

    impl Task for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn layers(&self) -> Vec<(String, usize)> {
            vec![("w".into(), 2)]
        }
        fn init_params(&self) -> Vec<DenseVector> {
            vec![DenseVector::zeros(2)]
        }
        fn num_samples(&self) -> usize {
            4
        }
        fn loss(&self, p: &[&[f64]], _: &[usize], _: usize) -> f64 {
            p[0].iter().map(|v| v * v).sum()
        }
        fn grad(&self, p: &[&[f64]], _: &[usize], _: usize) -> Vec<DenseVector> {
            // missing the factor 2
            vec![DenseVector::from(p[0])]
        }
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let err = gradient_check(&Broken, 10, 0).unwrap_err();
        assert!(matches!(err, Error::GradientCheck { .. }));
    }
}
