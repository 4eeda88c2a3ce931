//! Synthetic tasks with analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::task::Task;
use crate::error::{Error, Result};
use crate::numerics::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Quadratic,
    Logistic,
    Mlp,
    Drift,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Quadratic => "quadratic",
            TaskKind::Logistic => "logistic",
            TaskKind::Mlp => "mlp",
            TaskKind::Drift => "drift",
        }
    }
}

/// Shape and data parameters shared by all tasks. Each task reads the
/// fields it needs:
///
/// | task      | fields                                               |
/// |-----------|------------------------------------------------------|
/// | quadratic | layers, dim, samples, condition, noise               |
/// | logistic  | dim (features), samples, label_noise, l2             |
/// | mlp       | dim (inputs), hidden, samples, noise                 |
/// | drift     | layers, dim, samples, noise, drift_step, drift_scale |
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub layers: usize,
    pub dim: usize,
    pub samples: usize,
    pub hidden: usize,
    pub condition: f64,
    pub noise: f64,
    pub label_noise: f64,
    pub l2: f64,
    pub drift_step: usize,
    pub drift_scale: f64,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Quadratic,
            layers: 4,
            dim: 32,
            samples: 512,
            hidden: 16,
            condition: 100.0,
            noise: 0.2,
            label_noise: 0.05,
            l2: 1e-3,
            drift_step: 400,
            drift_scale: 0.25,
            seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.samples == 0 || self.dim == 0 {
            return fail("samples and dim must be positive".into());
        }
        if matches!(self.kind, TaskKind::Quadratic | TaskKind::Drift) && self.layers == 0 {
            return fail("layers must be positive".into());
        }
        if self.kind == TaskKind::Mlp && self.hidden == 0 {
            return fail("hidden must be positive".into());
        }
        if !(self.condition >= 1.0) {
            return fail(format!("condition must be at least 1, got {}", self.condition));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return fail(format!("noise must be finite and nonnegative, got {}", self.noise));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return fail(format!("label_noise must lie in [0, 0.5), got {}", self.label_noise));
        }
        if !(self.l2 >= 0.0) {
            return fail(format!("l2 must be nonnegative, got {}", self.l2));
        }
        if !(self.drift_scale > 0.0) || !self.drift_scale.is_finite() {
            return fail(format!("drift_scale must be positive, got {}", self.drift_scale));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Task>> {
        self.validate()?;
        Ok(match self.kind {
            TaskKind::Quadratic => Box::new(QuadraticTask::new(self)),
            TaskKind::Logistic => Box::new(LogisticTask::new(self)),
            TaskKind::Mlp => Box::new(MlpTask::new(self)),
            TaskKind::Drift => Box::new(DriftTask::new(self)),
        })
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Neumaier-compensated sum, so finite differences of large losses stay
/// above rounding noise.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

const DATA: u64 = 1;
const INIT: u64 = 2;

/// `mean_i (1/D) sum 0.5 * h * (x - t_i)^2` with per-layer curvature spread
/// geometrically over `[1, condition]` and noisy per-sample targets.
pub struct QuadraticTask {
    dims: Vec<usize>,
    curvature: Vec<Vec<f64>>,
    /// `samples x D`, row-major.
    targets: Vec<f64>,
    total: usize,
    init: Vec<DenseVector>,
}

impl QuadraticTask {
    pub fn new(spec: &TaskSpec) -> Self {
        let mut data = rng(spec.seed, DATA);
        let dims = vec![spec.dim; spec.layers];
        let total = spec.dim * spec.layers;
        let curvature = (0..spec.layers)
            .map(|l| {
                let t = if spec.layers > 1 {
                    l as f64 / (spec.layers - 1) as f64
                } else {
                    0.0
                };
                let base = spec.condition.powf(t);
                (0..spec.dim).map(|_| base * data.random_range(0.5..1.5)).collect()
            })
            .collect();
        let optimum = normals(&mut data, total, 1.0);
        let mut targets = Vec::with_capacity(spec.samples * total);
        for _ in 0..spec.samples {
            targets.extend(
                optimum
                    .iter()
                    .map(|o| o + spec.noise * data.sample::<f64, _>(StandardNormal)),
            );
        }
        let mut init = rng(spec.seed, INIT);
        let init = dims
            .iter()
            .map(|&d| DenseVector::from_vec_unchecked(normals(&mut init, d, 1.0)))
            .collect();
        Self {
            dims,
            curvature,
            targets,
            total,
            init,
        }
    }

    fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.total..(i + 1) * self.total]
    }
}

impl Task for QuadraticTask {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn layers(&self) -> Vec<(String, usize)> {
        self.dims
            .iter()
            .enumerate()
            .map(|(l, &d)| (format!("layer{l}"), d))
            .collect()
    }

    fn init_params(&self) -> Vec<DenseVector> {
        self.init.clone()
    }

    fn num_samples(&self) -> usize {
        self.targets.len() / self.total
    }

    fn loss(&self, params: &[&[f64]], batch: &[usize], _step: usize) -> f64 {
        let mut sum = CompensatedSum::default();
        for &i in batch {
            let t = self.target(i);
            let mut offset = 0;
            for (x, h) in params.iter().zip(&self.curvature) {
                for (j, (x, h)) in x.iter().zip(h).enumerate() {
                    let e = x - t[offset + j];
                    sum.add(0.5 * h * e * e);
                }
                offset += x.len();
            }
        }
        sum.value() / (batch.len() as f64 * self.total as f64)
    }

    fn grad(&self, params: &[&[f64]], batch: &[usize], _step: usize) -> Vec<DenseVector> {
        let norm = 1.0 / (batch.len() as f64 * self.total as f64);
        let mut offset = 0;
        let mut out = Vec::with_capacity(params.len());
        for (x, h) in params.iter().zip(&self.curvature) {
            let mut g = vec![0.0; x.len()];
            for &i in batch {
                let t = &self.target(i)[offset..offset + x.len()];
                for ((g, x), t) in g.iter_mut().zip(x.iter()).zip(t) {
                    *g += x - t;
                }
            }
            for (g, h) in g.iter_mut().zip(h) {
                *g *= h * norm;
            }
            offset += x.len();
            out.push(DenseVector::from_vec_unchecked(g));
        }
        out
    }
}

fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// Binary logistic regression on teacher-labelled Gaussian features with a
/// fraction of labels flipped, plus an L2 penalty on the weights.
pub struct LogisticTask {
    features: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    l2: f64,
    init: Vec<DenseVector>,
}

impl LogisticTask {
    pub fn new(spec: &TaskSpec) -> Self {
        let p = spec.dim;
        let mut data = rng(spec.seed, DATA);
        let teacher = normals(&mut data, p, 1.0);
        let bias: f64 = data.sample::<f64, _>(StandardNormal) * 0.5;
        let x = normals(&mut data, spec.samples * p, 1.0);
        let y = (0..spec.samples)
            .map(|i| {
                let z = dot(&teacher, &x[i * p..(i + 1) * p]) + bias;
                let label = if z >= 0.0 { 1.0 } else { -1.0 };
                if data.random::<f64>() < spec.label_noise {
                    -label
                } else {
                    label
                }
            })
            .collect();
        let mut init = rng(spec.seed, INIT);
        let init = vec![
            DenseVector::from_vec_unchecked(normals(&mut init, p, 0.1)),
            DenseVector::zeros(1),
        ];
        Self {
            features: p,
            x,
            y,
            l2: spec.l2,
            init,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }
}

impl Task for LogisticTask {
    fn name(&self) -> &str {
        "logistic"
    }

    fn layers(&self) -> Vec<(String, usize)> {
        vec![("weight".into(), self.features), ("bias".into(), 1)]
    }

    fn init_params(&self) -> Vec<DenseVector> {
        self.init.clone()
    }

    fn num_samples(&self) -> usize {
        self.y.len()
    }

    fn loss(&self, params: &[&[f64]], batch: &[usize], _step: usize) -> f64 {
        let (w, b) = (params[0], params[1][0]);
        let data: f64 = batch
            .iter()
            .map(|&i| softplus(-self.y[i] * (dot(w, self.row(i)) + b)))
            .sum::<f64>()
            / batch.len() as f64;
        data + 0.5 * self.l2 * dot(w, w)
    }

    fn grad(&self, params: &[&[f64]], batch: &[usize], _step: usize) -> Vec<DenseVector> {
        let (w, b) = (params[0], params[1][0]);
        let mut gw = vec![0.0; self.features];
        let mut gb = 0.0;
        for &i in batch {
            let row = self.row(i);
            let coeff = -self.y[i] * sigmoid(-self.y[i] * (dot(w, row) + b));
            for (g, x) in gw.iter_mut().zip(row) {
                *g += coeff * x;
            }
            gb += coeff;
        }
        let inv = 1.0 / batch.len() as f64;
        for (g, w) in gw.iter_mut().zip(w) {
            *g = *g * inv + self.l2 * w;
        }
        vec![
            DenseVector::from_vec_unchecked(gw),
            DenseVector::from_vec_unchecked(vec![gb * inv]),
        ]
    }
}

/// Two-layer tanh network `w2 . tanh(W1 x + b1) + b2` regressing a random
/// teacher of the same shape under squared loss.
pub struct MlpTask {
    inputs: usize,
    hidden: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    init: Vec<DenseVector>,
}

fn mlp_forward(w1: &[f64], b1: &[f64], w2: &[f64], b2: f64, x: &[f64], act: &mut [f64]) -> f64 {
    let p = x.len();
    for (k, a) in act.iter_mut().enumerate() {
        *a = (dot(&w1[k * p..(k + 1) * p], x) + b1[k]).tanh();
    }
    dot(w2, act) + b2
}

fn mlp_params(rng: &mut ChaCha8Rng, p: usize, h: usize) -> Vec<Vec<f64>> {
    vec![
        normals(rng, h * p, 1.0 / (p as f64).sqrt()),
        normals(rng, h, 0.1),
        normals(rng, h, 1.0 / (h as f64).sqrt()),
        normals(rng, 1, 0.1),
    ]
}

impl MlpTask {
    pub fn new(spec: &TaskSpec) -> Self {
        let (p, h) = (spec.dim, spec.hidden);
        let mut data = rng(spec.seed, DATA);
        let teacher = mlp_params(&mut data, p, h);
        let x = normals(&mut data, spec.samples * p, 1.0);
        let mut act = vec![0.0; h];
        let y = (0..spec.samples)
            .map(|i| {
                mlp_forward(
                    &teacher[0],
                    &teacher[1],
                    &teacher[2],
                    teacher[3][0],
                    &x[i * p..(i + 1) * p],
                    &mut act,
                ) + spec.noise * data.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let mut init = rng(spec.seed, INIT);
        let init = mlp_params(&mut init, p, h)
            .into_iter()
            .map(DenseVector::from_vec_unchecked)
            .collect();
        Self {
            inputs: p,
            hidden: h,
            x,
            y,
            init,
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.inputs..(i + 1) * self.inputs]
    }
}

impl Task for MlpTask {
    fn name(&self) -> &str {
        "mlp"
    }

    fn layers(&self) -> Vec<(String, usize)> {
        vec![
            ("w1".into(), self.hidden * self.inputs),
            ("b1".into(), self.hidden),
            ("w2".into(), self.hidden),
            ("b2".into(), 1),
        ]
    }

    fn init_params(&self) -> Vec<DenseVector> {
        self.init.clone()
    }

    fn num_samples(&self) -> usize {
        self.y.len()
    }

    fn loss(&self, params: &[&[f64]], batch: &[usize], _step: usize) -> f64 {
        let mut act = vec![0.0; self.hidden];
        let sum: f64 = batch
            .iter()
            .map(|&i| {
                let e = mlp_forward(params[0], params[1], params[2], params[3][0], self.row(i), &mut act) - self.y[i];
                0.5 * e * e
            })
            .sum();
        sum / batch.len() as f64
    }

    fn grad(&self, params: &[&[f64]], batch: &[usize], _step: usize) -> Vec<DenseVector> {
        let (p, h) = (self.inputs, self.hidden);
        let (w1, b1, w2, b2) = (params[0], params[1], params[2], params[3][0]);
        let mut gw1 = vec![0.0; h * p];
        let mut gb1 = vec![0.0; h];
        let mut gw2 = vec![0.0; h];
        let mut gb2 = 0.0;
        let mut act = vec![0.0; h];
        for &i in batch {
            let x = self.row(i);
            let e = mlp_forward(w1, b1, w2, b2, x, &mut act) - self.y[i];
            gb2 += e;
            for k in 0..h {
                gw2[k] += e * act[k];
                let da = e * w2[k] * (1.0 - act[k] * act[k]);
                gb1[k] += da;
                for (g, x) in gw1[k * p..(k + 1) * p].iter_mut().zip(x) {
                    *g += da * x;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        [gw1, gb1, gw2, vec![gb2]]
            .into_iter()
            .map(|mut g| {
                g.iter_mut().for_each(|g| *g *= inv);
                DenseVector::from_vec_unchecked(g)
            })
            .collect()
    }
}

/// Linear regression whose feature groups (one layer each) are rescaled at
/// `drift_step`: group `l` of `L` is multiplied by
/// `drift_scale^(l / (L - 1))`, so gradient second moments of later layers
/// move by up to `drift_scale^2` while the minimizer stays put.
pub struct DriftTask {
    groups: usize,
    dim: usize,
    x: Vec<f64>,
    /// Teacher output per group before scaling, plus the noise term.
    teacher: Vec<f64>,
    noise: Vec<f64>,
    drift_step: usize,
    drift_scale: f64,
    init: Vec<DenseVector>,
}

impl DriftTask {
    pub fn new(spec: &TaskSpec) -> Self {
        let (groups, dim) = (spec.layers, spec.dim);
        let total = groups * dim;
        let mut data = rng(spec.seed, DATA);
        let w_star = normals(&mut data, total, 1.0);
        let x = normals(&mut data, spec.samples * total, 1.0 / (total as f64).sqrt());
        let noise = normals(&mut data, spec.samples, spec.noise);
        let teacher = (0..spec.samples)
            .flat_map(|i| {
                let row = &x[i * total..(i + 1) * total];
                (0..groups)
                    .map(|l| dot(&w_star[l * dim..(l + 1) * dim], &row[l * dim..(l + 1) * dim]))
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut init = rng(spec.seed, INIT);
        let init = (0..groups)
            .map(|_| DenseVector::from_vec_unchecked(normals(&mut init, dim, 1.0)))
            .collect();
        Self {
            groups,
            dim,
            x,
            teacher,
            noise,
            drift_step: spec.drift_step,
            drift_scale: spec.drift_scale,
            init,
        }
    }

    /// Feature multiplier of group `l` at `step`.
    pub fn group_scale(&self, l: usize, step: usize) -> f64 {
        if step < self.drift_step || self.groups < 2 {
            1.0
        } else {
            self.drift_scale.powf(l as f64 / (self.groups - 1) as f64)
        }
    }

    fn residual(&self, params: &[&[f64]], i: usize, scales: &[f64]) -> f64 {
        let total = self.groups * self.dim;
        let row = &self.x[i * total..(i + 1) * total];
        let mut e = -self.noise[i];
        for (l, w) in params.iter().enumerate() {
            let group = &row[l * self.dim..(l + 1) * self.dim];
            e += scales[l] * (dot(w, group) - self.teacher[i * self.groups + l]);
        }
        e
    }
}

impl Task for DriftTask {
    fn name(&self) -> &str {
        "drift"
    }

    fn layers(&self) -> Vec<(String, usize)> {
        (0..self.groups).map(|l| (format!("group{l}"), self.dim)).collect()
    }

    fn init_params(&self) -> Vec<DenseVector> {
        self.init.clone()
    }

    fn num_samples(&self) -> usize {
        self.noise.len()
    }

    fn loss(&self, params: &[&[f64]], batch: &[usize], step: usize) -> f64 {
        let scales: Vec<f64> = (0..self.groups).map(|l| self.group_scale(l, step)).collect();
        let sum: f64 = batch
            .iter()
            .map(|&i| {
                let e = self.residual(params, i, &scales);
                0.5 * e * e
            })
            .sum();
        sum / batch.len() as f64
    }

    fn grad(&self, params: &[&[f64]], batch: &[usize], step: usize) -> Vec<DenseVector> {
        let scales: Vec<f64> = (0..self.groups).map(|l| self.group_scale(l, step)).collect();
        let total = self.groups * self.dim;
        let mut grads = vec![vec![0.0; self.dim]; self.groups];
        for &i in batch {
            let e = self.residual(params, i, &scales);
            let row = &self.x[i * total..(i + 1) * total];
            for (l, g) in grads.iter_mut().enumerate() {
                let coeff = e * scales[l];
                for (g, x) in g.iter_mut().zip(&row[l * self.dim..(l + 1) * self.dim]) {
                    *g += coeff * x;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        grads
            .into_iter()
            .map(|mut g| {
                g.iter_mut().for_each(|g| *g *= inv);
                DenseVector::from_vec_unchecked(g)
            })
            .collect()
    }
}
