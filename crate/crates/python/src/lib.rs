//! Python bindings: numerics helpers, the 1-bit codec, the simulated
//! cluster, the distributed optimizers and the training harness.

use onebit_lamb::comm::{self, SimCluster};
use onebit_lamb::compression::{self, CompressedBlock, CompressorKind};
use onebit_lamb::harness::{self, RunConfig};
use onebit_lamb::numerics::{self, DenseVector};
use onebit_lamb::optim::{self, HyperParams, OptimizerKind};
use onebit_lamb::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::NonFinite { .. } | Error::Diverged { .. } | Error::StageOrder(_) | Error::Corruption(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn compressor(name: &str) -> PyResult<CompressorKind> {
    CompressorKind::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown compressor {name:?}")))
}

#[pyfunction]
fn clip(x: f64, lo: f64, hi: f64) -> PyResult<f64> {
    numerics::clip(x, lo, hi).map_err(to_py)
}

#[pyfunction]
fn l2_norm(v: Vec<f64>) -> f64 {
    numerics::l2_norm(&v)
}

#[pyfunction]
fn inf_norm(v: Vec<f64>) -> f64 {
    numerics::inf_norm(&v)
}

/// Returns `(sign_bytes, scale, length)`.
#[pyfunction]
fn compress_1bit<'py>(py: Python<'py>, v: Vec<f64>) -> (Bound<'py, PyBytes>, f64, usize) {
    let block = compression::compress_1bit(&v);
    (PyBytes::new(py, block.sign_bytes()), block.scale(), block.len())
}

#[pyfunction]
fn decompress(signs: Vec<u8>, scale: f64, length: usize) -> PyResult<Vec<f64>> {
    let block = CompressedBlock::from_parts(signs, scale, length).map_err(to_py)?;
    Ok(compression::decompress(&block).into_vec())
}

#[pyfunction]
#[pyo3(signature = (warmup_ratio, baseline_bits = 16, compressed_bits = 1.0))]
fn volume_reduction(warmup_ratio: f64, baseline_bits: u32, compressed_bits: f64) -> f64 {
    comm::volume_reduction(warmup_ratio, baseline_bits, compressed_bits)
}

/// `n` simulated workers with a compressed or lossless allreduce.
#[pyclass(name = "SimCluster")]
struct PySimCluster {
    inner: SimCluster,
}

#[pymethods]
impl PySimCluster {
    #[new]
    #[pyo3(signature = (workers, compressor = "onebit", audit = false))]
    fn new(workers: usize, compressor: &str, audit: bool) -> PyResult<Self> {
        let mut inner = SimCluster::new(workers, self::compressor(compressor)?).map_err(to_py)?;
        if audit {
            inner.enable_audit();
        }
        Ok(Self { inner })
    }

    #[getter]
    fn workers(&self) -> usize {
        self.inner.workers()
    }

    fn lossless_allreduce(&mut self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.inner.lossless_allreduce(&inputs).map_err(to_py)?.into_vec())
    }

    fn compressed_allreduce(&mut self, inputs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(self.inner.compressed_allreduce(&inputs).map_err(to_py)?.into_vec())
    }

    #[getter]
    fn total_bits(&self) -> u64 {
        self.inner.ledger().total_bits()
    }

    #[getter]
    fn reduction_factor(&self) -> f64 {
        self.inner.ledger().reduction_factor()
    }

    #[getter]
    fn compressed_collectives(&self) -> u64 {
        self.inner.ledger().compressed_collectives
    }

    #[getter]
    fn lossless_collectives(&self) -> u64 {
        self.inner.ledger().lossless_collectives
    }

    /// Worst relative compensation-identity violation, or None without audit.
    #[getter]
    fn max_audit_violation(&self) -> Option<f64> {
        self.inner.audit().map(|a| a.max_violation)
    }

    fn worker_errors(&self) -> Vec<Vec<f64>> {
        self.inner
            .worker_feedback()
            .iter()
            .map(|f| f.delta().to_vec())
            .collect()
    }
}

/// A data-parallel optimizer over named layers on its own simulated cluster.
#[pyclass(name = "Optimizer")]
struct PyOptimizer {
    inner: optim::DistributedOptimizer,
}

#[pymethods]
impl PyOptimizer {
    /// `params` is a list of `(name, values)` pairs. Keyword arguments
    /// override the matching hyper-parameter defaults.
    #[new]
    #[pyo3(signature = (kind, params, workers = 4, compressor = "onebit", **hyper))]
    fn new(
        kind: &str,
        params: Vec<(String, Vec<f64>)>,
        workers: usize,
        compressor: &str,
        hyper: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let kind = OptimizerKind::parse(kind).map_err(to_py)?;
        let mut hp = HyperParams::default();
        if let Some(hyper) = hyper {
            for (key, value) in hyper.iter() {
                let key: String = key.extract()?;
                match key.as_str() {
                    "lr" => hp.lr = value.extract()?,
                    "beta1" => hp.beta1 = value.extract()?,
                    "beta2" => hp.beta2 = value.extract()?,
                    "beta3" => hp.beta3 = value.extract()?,
                    "eta" => hp.eta = value.extract()?,
                    "c_min" => hp.c_min = value.extract()?,
                    "c_max" => hp.c_max = value.extract()?,
                    "r_min" => hp.r_min = value.extract()?,
                    "r_max" => hp.r_max = value.extract()?,
                    "r_threshold" => hp.r_threshold = value.extract()?,
                    "total_steps" => hp.total_steps = value.extract()?,
                    "warmup_steps" => hp.warmup_steps = value.extract()?,
                    "weight_decay" => hp.weight_decay = value.extract()?,
                    "ratio_floor" => hp.ratio_floor = value.extract()?,
                    "momentum_scaling" => hp.momentum_scaling = value.extract()?,
                    "rescale_error_feedback" => hp.rescale_error_feedback = value.extract()?,
                    other => return Err(PyValueError::new_err(format!("unknown hyper-parameter {other:?}"))),
                }
            }
        }
        let params = params
            .into_iter()
            .map(|(name, v)| Ok((name, DenseVector::new(v).map_err(to_py)?)))
            .collect::<PyResult<Vec<_>>>()?;
        let cluster = SimCluster::new(workers, self::compressor(compressor)?).map_err(to_py)?;
        let inner = optim::DistributedOptimizer::new(kind, hp, params, cluster).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// `grads[i][l]` is worker `i`'s gradient for layer `l`. Returns the
    /// stage name and per-layer `(c, r)` pairs.
    fn step(&mut self, grads: Vec<Vec<Vec<f64>>>, lr: f64) -> PyResult<(String, Vec<(f64, f64)>)> {
        let report = self.inner.step(&grads, lr).map_err(to_py)?;
        let coeffs = report.layers.iter().map(|l| (l.c, l.r)).collect();
        Ok((report.stage.name().to_string(), coeffs))
    }

    fn params(&self) -> Vec<Vec<f64>> {
        self.inner.params().into_iter().map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn steps_taken(&self) -> usize {
        self.inner.steps_taken()
    }

    #[getter]
    fn total_bits(&self) -> u64 {
        self.inner.cluster().ledger().total_bits()
    }
}

/// Validates a config file's text and returns it with every key filled in.
#[pyfunction]
fn normalize_config(text: &str) -> PyResult<String> {
    Ok(RunConfig::parse(text).map_err(to_py)?.to_text())
}

/// Runs a full training job from config text and returns its summary.
#[pyfunction]
fn run_training<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig::parse(config).map_err(to_py)?;
    let s = harness::run_training(&cfg).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("optimizer", &s.optimizer)?;
    out.set_item("task", &s.task)?;
    out.set_item("final_loss", s.final_loss)?;
    out.set_item("total_bits", s.total_bits)?;
    out.set_item("bits_uncompressed_equivalent", s.bits_uncompressed_equivalent)?;
    out.set_item("reduction_factor", s.reduction_factor)?;
    out.set_item("layers", &s.layer_names)?;
    out.set_item("losses", s.records.iter().map(|r| r.loss).collect::<Vec<_>>())?;
    out.set_item(
        "final_params",
        s.final_params.iter().map(|p| p.as_slice().to_vec()).collect::<Vec<_>>(),
    )?;
    Ok(out)
}

#[pymodule]
fn onebit_lamb_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(clip, m)?)?;
    m.add_function(wrap_pyfunction!(l2_norm, m)?)?;
    m.add_function(wrap_pyfunction!(inf_norm, m)?)?;
    m.add_function(wrap_pyfunction!(compress_1bit, m)?)?;
    m.add_function(wrap_pyfunction!(decompress, m)?)?;
    m.add_function(wrap_pyfunction!(volume_reduction, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_training, m)?)?;
    m.add_class::<PySimCluster>()?;
    m.add_class::<PyOptimizer>()?;
    Ok(())
}
