//! Toy tasks, data sharding, schedules, configuration and the training loop.

mod config;
mod metrics;
mod schedule;
mod task;
mod tasks;
mod train;

pub use config::RunConfig;
pub use metrics::{
    metrics_header, read_trace_csv, trace_rows, write_metrics_csv, write_trace_csv, MetricsRecord, TraceRow,
    TRACE_HEADER,
};
pub use schedule::{Schedule, ScheduleKind};
pub use task::{gradient_check, shard_batch, GradCheckReport, Task, GRAD_CHECK_ATOL, GRAD_CHECK_RTOL};
pub use tasks::{DriftTask, LogisticTask, MlpTask, QuadraticTask, TaskKind, TaskSpec};
pub use train::{
    run_training, trace_coefficients, RunSummary, Trainer, CONFIG_FILE, METRICS_FILE, SUMMARY_FILE, TRACE_FILE,
};
