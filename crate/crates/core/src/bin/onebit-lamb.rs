use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use onebit_lamb::comm::volume_reduction;
use onebit_lamb::harness::{run_training, trace_coefficients, RunConfig, RunSummary, TRACE_FILE};

#[derive(Parser)]
#[command(version, about = "1-bit LAMB on a simulated compressed-allreduce cluster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and print its summary.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train several configurations and print a side-by-side table.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
    },
    /// Train and write per-layer c, r and variance-norm series to trace.csv.
    TraceCoefficients {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides output_dir from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form end-to-end communication volume reduction.
    Volume {
        #[arg(long)]
        warmup_ratio: f64,
        #[arg(long, default_value_t = 16)]
        baseline_bits: u32,
        #[arg(long, default_value_t = 1.0)]
        compressed_bits: f64,
    },
}

fn run(cli: Cli) -> onebit_lamb::Result<()> {
    match cli.command {
        Command::Train { config } => {
            let summary = run_training(&RunConfig::from_path(&config)?)?;
            print!("{}", summary.to_text());
            if let Some(p) = &summary.metrics_path {
                println!("metrics = {}", p.display());
            }
        }
        Command::Compare { configs } => {
            let mut rows: Vec<(String, RunSummary)> = Vec::new();
            for path in &configs {
                let summary = run_training(&RunConfig::from_path(path)?)?;
                rows.push((path.display().to_string(), summary));
            }
            print_table(&rows);
        }
        Command::TraceCoefficients { config, out } => {
            let mut cfg = RunConfig::from_path(&config)?;
            let dir = out
                .or(cfg.output_dir.take())
                .unwrap_or_else(|| PathBuf::from("trace_out"));
            cfg.output_dir = Some(dir.clone());
            let (summary, rows) = trace_coefficients(&cfg)?;
            println!("{} rows over {} layers", rows.len(), summary.layer_names.len());
            println!("trace = {}", dir.join(TRACE_FILE).display());
        }
        Command::Volume {
            warmup_ratio,
            baseline_bits,
            compressed_bits,
        } => {
            if !(0.0..=1.0).contains(&warmup_ratio)
                || baseline_bits == 0
                || compressed_bits.is_nan()
                || compressed_bits <= 0.0
            {
                return Err(onebit_lamb::Error::Config(
                    "need 0 <= warmup-ratio <= 1, baseline-bits >= 1 and compressed-bits > 0".into(),
                ));
            }
            println!("{:.4}", volume_reduction(warmup_ratio, baseline_bits, compressed_bits));
        }
    }
    Ok(())
}

fn print_table(rows: &[(String, RunSummary)]) {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    println!(
        "{:<width$}  {:<16}  {:<10}  {:>14}  {:>14}  {:>9}  {:>8}",
        "config", "optimizer", "task", "final_loss", "total_bits", "reduction", "secs"
    );
    for (name, s) in rows {
        println!(
            "{:<width$}  {:<16}  {:<10}  {:>14.6e}  {:>14}  {:>9.4}  {:>8.2}",
            name, s.optimizer, s.task, s.final_loss, s.total_bits, s.reduction_factor, s.wallclock_secs
        );
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
