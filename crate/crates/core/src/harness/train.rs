//! The training loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::RunConfig;
use super::metrics::{trace_rows, write_metrics_csv, write_trace_csv, MetricsRecord, TraceRow};
use super::schedule::Schedule;
use super::task::{gradient_check, shard_batch, Task};
use crate::comm::{CompensationAudit, EndpointStats, SimCluster, VolumeLedger};
use crate::error::{Error, Result};
use crate::numerics::DenseVector;
use crate::optim::DistributedOptimizer;

pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Drives one optimizer over one task, a step at a time.
pub struct Trainer {
    cfg: RunConfig,
    task: Box<dyn Task>,
    opt: DistributedOptimizer,
    schedule: Schedule,
    layer_names: Vec<String>,
    started: Instant,
}

impl Trainer {
    /// Validates the config, builds the task, runs its gradient check and
    /// sets up the cluster.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let task = cfg.task_spec().build()?;
        if cfg.grad_check_probes > 0 {
            gradient_check(task.as_ref(), cfg.grad_check_probes, cfg.seed)?;
        }
        let mut cluster = SimCluster::with_baseline_bits(cfg.workers, cfg.compressor, cfg.baseline_bits)?;
        if cfg.audit {
            cluster.enable_audit();
        }
        let layer_names: Vec<String> = task.layers().into_iter().map(|(name, _)| name).collect();
        let params = layer_names.iter().cloned().zip(task.init_params()).collect();
        let opt = DistributedOptimizer::new(cfg.optimizer, cfg.hyper_params(), params, cluster)?;
        Ok(Self {
            cfg: cfg.clone(),
            task,
            opt,
            schedule: cfg.lr_schedule(),
            layer_names,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn task(&self) -> &dyn Task {
        self.task.as_ref()
    }

    pub fn optimizer(&self) -> &DistributedOptimizer {
        &self.opt
    }

    pub fn layer_names(&self) -> &[String] {
        &self.layer_names
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.opt.params()
    }

    pub fn steps_taken(&self) -> usize {
        self.opt.steps_taken()
    }

    pub fn is_done(&self) -> bool {
        self.steps_taken() >= self.cfg.total_steps
    }

    /// Full-dataset loss at the current parameters, with the task as it is
    /// at the next step.
    pub fn full_loss(&self) -> f64 {
        self.task.full_loss(&self.params(), self.steps_taken())
    }

    /// Learning rate used at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        self.cfg.lr * self.schedule.factor(step)
    }

    pub fn step(&mut self) -> Result<MetricsRecord> {
        let t = self.steps_taken();
        let shards = shard_batch(self.task.num_samples(), t, self.cfg.workers, self.cfg.batch_size);
        let (loss, grads) = {
            let params = self.opt.params();
            let mut loss = 0.0;
            let mut grads = Vec::with_capacity(shards.len());
            for batch in &shards {
                loss += self.task.loss(&params, batch, t);
                grads.push(self.task.grad(&params, batch, t));
            }
            (loss / shards.len() as f64, grads)
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step: t, loss });
        }
        let lr = self.lr_at(t);
        let report = self.opt.step(&grads, lr)?;
        let cluster = self.opt.cluster();
        let ledger = cluster.ledger();
        Ok(MetricsRecord {
            step: t,
            stage: report.stage,
            loss,
            lr,
            c: report.layers.iter().map(|l| l.c).collect(),
            r: report.layers.iter().map(|l| l.r).collect(),
            v_norm: report.layers.iter().map(|l| l.v_norm).collect(),
            ratio_raw: report.layers.iter().map(|l| l.ratio_raw).collect(),
            delta_worker: cluster.worker_stats().iter().map(|s| s.last_delta_l2).collect(),
            delta_server: cluster.server_stats().iter().map(|s| s.last_delta_l2).collect(),
            bits_cumulative: ledger.total_bits(),
            bits_uncompressed_cumulative: ledger.bits_uncompressed_equivalent,
            wallclock: self.started.elapsed().as_secs_f64(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub optimizer: String,
    pub task: String,
    pub final_loss: f64,
    pub total_bits: u64,
    pub bits_uncompressed_equivalent: u64,
    pub reduction_factor: f64,
    pub measured_bits_per_element: Option<f64>,
    pub ledger: VolumeLedger,
    pub audit: Option<CompensationAudit>,
    pub worker_stats: Vec<EndpointStats>,
    pub server_stats: Vec<EndpointStats>,
    pub layer_names: Vec<String>,
    pub records: Vec<MetricsRecord>,
    pub final_params: Vec<DenseVector>,
    pub metrics_path: Option<PathBuf>,
    pub trace_path: Option<PathBuf>,
    pub wallclock_secs: f64,
}

impl RunSummary {
    pub fn trace(&self) -> Vec<TraceRow> {
        trace_rows(&self.layer_names, &self.records)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "optimizer = {}", self.optimizer);
        let _ = writeln!(s, "task = {}", self.task);
        let _ = writeln!(s, "steps = {}", self.records.len());
        let _ = writeln!(s, "final_loss = {:.16e}", self.final_loss);
        let _ = writeln!(s, "total_bits = {}", self.total_bits);
        let _ = writeln!(
            s,
            "bits_uncompressed_equivalent = {}",
            self.bits_uncompressed_equivalent
        );
        let _ = writeln!(s, "reduction_factor = {:.6}", self.reduction_factor);
        if let Some(b) = self.measured_bits_per_element {
            let _ = writeln!(s, "measured_bits_per_element = {b:.6}");
        }
        let _ = writeln!(s, "compressed_collectives = {}", self.ledger.compressed_collectives);
        let _ = writeln!(s, "lossless_collectives = {}", self.ledger.lossless_collectives);
        if let Some(a) = self.audit {
            let _ = writeln!(s, "audit_max_violation = {:.3e}", a.max_violation);
        }
        let _ = writeln!(s, "wallclock_secs = {:.3}", self.wallclock_secs);
        s
    }
}

fn write_outputs(
    dir: &Path,
    cfg: &RunConfig,
    layers: &[String],
    records: &[MetricsRecord],
) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = dir.join(CONFIG_FILE);
    std::fs::write(&config, cfg.to_text()).map_err(|e| Error::io(&config, e))?;
    let metrics = dir.join(METRICS_FILE);
    write_metrics_csv(&metrics, layers, cfg.workers, records)?;
    let trace = dir.join(TRACE_FILE);
    write_trace_csv(&trace, &trace_rows(layers, records))?;
    Ok((metrics, trace))
}

/// Runs warmup then compression to `total_steps`. With `output_dir` set,
/// writes the config, metrics, trace and summary there. On divergence the
/// records up to the last good step are still written before the error is
/// returned.
pub fn run_training(cfg: &RunConfig) -> Result<RunSummary> {
    let started = Instant::now();
    let mut trainer = Trainer::new(cfg)?;
    let mut records = Vec::with_capacity(cfg.total_steps);
    while !trainer.is_done() {
        match trainer.step() {
            Ok(r) => records.push(r),
            Err(e) => {
                if let Some(dir) = &cfg.output_dir {
                    write_outputs(dir, cfg, trainer.layer_names(), &records)?;
                }
                return Err(e);
            }
        }
    }
    let final_loss = trainer.full_loss();
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            step: trainer.steps_taken(),
            loss: final_loss,
        });
    }
    let cluster = trainer.optimizer().cluster();
    let ledger = cluster.ledger().clone();
    let mut summary = RunSummary {
        optimizer: cfg.optimizer.name().into(),
        task: cfg.task.name().into(),
        final_loss,
        total_bits: ledger.total_bits(),
        bits_uncompressed_equivalent: ledger.bits_uncompressed_equivalent,
        reduction_factor: ledger.reduction_factor(),
        measured_bits_per_element: ledger.measured_bits_per_element(),
        audit: cluster.audit(),
        worker_stats: cluster.worker_stats().to_vec(),
        server_stats: cluster.server_stats().to_vec(),
        ledger,
        layer_names: trainer.layer_names().to_vec(),
        final_params: trainer.optimizer().layers().iter().map(|l| l.x.clone()).collect(),
        records,
        metrics_path: None,
        trace_path: None,
        wallclock_secs: 0.0,
    };
    summary.wallclock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = &cfg.output_dir {
        let (metrics, trace) = write_outputs(dir, cfg, &summary.layer_names, &summary.records)?;
        summary.metrics_path = Some(metrics);
        summary.trace_path = Some(trace);
        let path = dir.join(SUMMARY_FILE);
        std::fs::write(&path, summary.to_text()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(summary)
}

/// Runs training for the per-layer coefficient, ratio and variance-norm
/// series. Returns the rows of `trace.csv` (also written when `output_dir`
/// is set).
pub fn trace_coefficients(cfg: &RunConfig) -> Result<(RunSummary, Vec<TraceRow>)> {
    let summary = run_training(cfg)?;
    let rows = summary.trace();
    Ok((summary, rows))
}
