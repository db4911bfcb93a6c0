use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bttf_core::experiment::{emit_report, run_experiment, ExperimentConfig, HorizonOutcome, ReportFormat, RunOptions};
use bttf_core::refine::PoolManifest;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bttf", version, about = "Look-ahead augmented linear forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Worker threads for second-stage training.
        #[arg(long, env = "BTTF_WORKERS", default_value_t = 1)]
        parallel: usize,
        /// Also train each pool sequentially, record both timings and check they match.
        #[arg(long)]
        compare_sequential: bool,
        /// Report path; defaults to the config's `output`, then report.<format>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the members of a saved second-stage pool in rank order.
    InspectPool {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write a deterministic synthetic dataset in the ILI CSV layout.
    SynthIli {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = bttf_core::synth::ILI_ROWS)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(
    config: PathBuf,
    format: Format,
    workers: usize,
    compare_sequential: bool,
    out: Option<PathBuf>,
) -> Result<bool> {
    let cfg = ExperimentConfig::load(&config).with_context(|| format!("config: {}", config.display()))?;
    let (format, ext) = match format {
        Format::Json => (ReportFormat::Json, "json"),
        Format::Csv => (ReportFormat::Csv, "csv"),
    };
    let out = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(format!("report.{ext}")));
    let options = RunOptions {
        workers: workers.max(1),
        compare_sequential,
    };
    let report = run_experiment(&cfg, &options)?;
    let mut all_ok = true;
    for outcome in &report.results {
        match outcome {
            HorizonOutcome::Ok(r) => eprintln!(
                "H={:<4} N={:<3} K*={:<3} {} mse {:.4} -> {} mse {:.4} ({:+.1}%)",
                r.horizon,
                r.n,
                r.k_star,
                r.base.model_label,
                r.base.mse,
                r.bttf.model_label,
                r.bttf.mse,
                r.bttf.gain_mse_pct.unwrap_or(f64::NAN)
            ),
            HorizonOutcome::Failed { horizon, error } => {
                all_ok = false;
                eprintln!("H={horizon:<4} failed: {error}");
            }
        }
    }
    emit_report(&report, format, &out).context("report")?;
    eprintln!("report written to {}", out.display());
    Ok(all_ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            format,
            parallel,
            compare_sequential,
            out,
        } => run(config, format, parallel, compare_sequential, out),
        Command::InspectPool { manifest } => PoolManifest::load(&manifest)
            .map(|m| {
                print!("{}", m.render());
                true
            })
            .context("inspect-pool"),
        Command::SynthIli { out, rows, seed } => bttf_core::synth::write_ili_csv(&out, rows, seed)
            .map(|_| true)
            .context("synth-ili"),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
