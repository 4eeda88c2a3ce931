//! Per-step metrics and their CSV forms.
//!
//! `metrics.csv` is wide: one row per step with per-layer and per-endpoint
//! columns. `trace.csv` is long: one row per step and layer. Floats are
//! written with 17 significant digits so files round-trip exactly.

use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::Stage;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: usize,
    pub stage: Stage,
    /// Mean of the workers' minibatch losses before the update.
    pub loss: f64,
    pub lr: f64,
    pub c: Vec<f64>,
    pub r: Vec<f64>,
    pub v_norm: Vec<f64>,
    /// Frozen/fresh variance ratio before clipping, compression steps only.
    pub ratio_raw: Vec<Option<f64>>,
    /// `||delta||_2` of each worker residual after the step.
    pub delta_worker: Vec<f64>,
    /// `||delta||_2` of each server residual after the step.
    pub delta_server: Vec<f64>,
    pub bits_cumulative: u64,
    pub bits_uncompressed_cumulative: u64,
    /// Seconds since the run started. Kept out of the CSV files so they are
    /// reproducible byte for byte.
    pub wallclock: f64,
}

impl MetricsRecord {
    pub fn delta_total(&self) -> f64 {
        self.delta_worker.iter().chain(&self.delta_server).sum()
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

pub fn metrics_header(layers: &[String], workers: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "stage".into(), "loss".into(), "lr".into()];
    for prefix in ["c", "r", "v_norm"] {
        h.extend(layers.iter().map(|l| format!("{prefix}_{l}")));
    }
    h.extend((0..workers).map(|i| format!("delta_worker_{i}")));
    h.extend((0..workers).map(|j| format!("delta_server_{j}")));
    h.push("delta_total".into());
    h.push("bits_cumulative".into());
    h.push("bits_uncompressed_cumulative".into());
    h
}

fn metrics_row(r: &MetricsRecord) -> Vec<String> {
    let mut row = vec![
        r.step.to_string(),
        r.stage.name().into(),
        fmt_f64(r.loss),
        fmt_f64(r.lr),
    ];
    for values in [&r.c, &r.r, &r.v_norm, &r.delta_worker, &r.delta_server] {
        row.extend(values.iter().copied().map(fmt_f64));
    }
    row.push(fmt_f64(r.delta_total()));
    row.push(r.bits_cumulative.to_string());
    row.push(r.bits_uncompressed_cumulative.to_string());
    row
}

pub fn write_metrics_csv(path: &Path, layers: &[String], workers: usize, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(metrics_header(layers, workers))
        .map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record(metrics_row(r)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const TRACE_HEADER: [&str; 7] = ["step", "layer", "stage", "c", "r", "ratio_raw", "v_norm"];

/// One row of `trace.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub layer: String,
    pub stage: Stage,
    pub c: f64,
    pub r: f64,
    pub ratio_raw: Option<f64>,
    pub v_norm: f64,
}

pub fn trace_rows(layers: &[String], records: &[MetricsRecord]) -> Vec<TraceRow> {
    records
        .iter()
        .flat_map(|rec| {
            layers.iter().enumerate().map(move |(l, name)| TraceRow {
                step: rec.step,
                layer: name.clone(),
                stage: rec.stage,
                c: rec.c[l],
                r: rec.r[l],
                ratio_raw: rec.ratio_raw[l],
                v_norm: rec.v_norm[l],
            })
        })
        .collect()
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(TRACE_HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.layer.clone(),
            r.stage.name().to_string(),
            fmt_f64(r.c),
            fmt_f64(r.r),
            r.ratio_raw.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.v_norm),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let bad = |what: &str, row: usize| Error::Decode(format!("{}: row {row}: bad {what}", path.display()));
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().ne(TRACE_HEADER) {
        return Err(Error::Decode(format!("{}: unexpected header", path.display())));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |k: usize, what: &str| rec[k].parse::<f64>().map_err(|_| bad(what, i));
        rows.push(TraceRow {
            step: rec[0].parse().map_err(|_| bad("step", i))?,
            layer: rec[1].to_string(),
            stage: match &rec[2] {
                "warmup" => Stage::Warmup,
                "compression" => Stage::Compression,
                _ => return Err(bad("stage", i)),
            },
            c: num(3, "c")?,
            r: num(4, "r")?,
            ratio_raw: if rec[5].is_empty() {
                None
            } else {
                Some(num(5, "ratio_raw")?)
            },
            v_norm: num(6, "v_norm")?,
        });
    }
    Ok(rows)
}
