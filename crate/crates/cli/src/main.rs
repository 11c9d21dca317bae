//! `recall` — dataset generation, theory verification, training, and the
//! benchmark grid, as thin wrappers over the `recall-core` library.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use recall_core::bench::{emit_report, run_grid, BenchmarkReport, GridSpec, ReportFormat};
use recall_core::nn::model::HybridModelConfig;
use recall_core::nn::train::{save_checkpoint, train, TrainConfig};
use recall_core::task::{generate_dataset, load_dataset, max_vocab, DatasetConfig};
use recall_core::theory::run_verification_suite;

#[derive(Parser)]
#[command(name = "recall", version, about = "joint-recall task toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a joint-recall dataset (JSON Lines + manifest).
    Gen {
        /// DatasetConfig as JSON.
        #[arg(long)]
        config: PathBuf,
        /// Output .jsonl path.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the executable theory suite and emit its JSON report.
    VerifyTheory {
        /// Largest tuple count exponent swept by the capacity check.
        #[arg(long, default_value_t = 4)]
        max_n: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a single model from a JSON run config.
    Train {
        /// RunConfig as JSON: model, train, dataset, val_count.
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint destination; metrics go to `<out>.metrics.jsonl`.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the train config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full (arch × lr × seed) benchmark grid.
    Bench {
        /// GridSpec as JSON.
        #[arg(long)]
        grid: PathBuf,
        /// Report destination (JSON). Ledger and datasets live in
        /// `<out>.work/` so an interrupted grid resumes.
        #[arg(long)]
        out: PathBuf,
        /// Worker count; cells currently run sequentially and this is
        /// accepted for interface stability.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-render a benchmark report.
    Report {
        /// Benchmark report JSON produced by `bench`.
        #[arg(long = "in")]
        input: PathBuf,
        /// One of csv, markdown (md), json.
        #[arg(long, default_value = "markdown")]
        format: String,
        /// Destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Single-run training specification consumed by `recall train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    model: HybridModelConfig,
    train: TrainConfig,
    dataset: DatasetConfig,
    /// Validation instances, generated from `dataset` with seed + 1.
    val_count: usize,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(file).with_context(|| format!("parsing {}", path.display()))
}

fn write_or_print(text: &str, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Gen { config, out, seed } => {
            let mut cfg: DatasetConfig = read_json(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let manifest = generate_dataset(&cfg, &out)?;
            eprintln!(
                "wrote {} instances to {} (sha256 {})",
                manifest.count,
                out.display(),
                manifest.checksum
            );
            Ok(true)
        }
        Command::VerifyTheory { max_n, seed, out } => {
            let report = run_verification_suite(max_n, seed)?;
            let text = serde_json::to_string_pretty(&report)?;
            write_or_print(&format!("{text}\n"), out.as_ref())?;
            if !report.all_pass {
                eprintln!("theory verification FAILED");
            }
            Ok(report.all_pass)
        }
        Command::Train { config, out, seed } => {
            let mut run_cfg: RunConfig = read_json(&config)?;
            if let Some(s) = seed {
                run_cfg.train.seed = s;
            }
            let dir = tempfile::tempdir()?;
            let train_path = dir.path().join("train.jsonl");
            generate_dataset(&run_cfg.dataset, &train_path)?;
            let val_cfg = DatasetConfig {
                count: run_cfg.val_count,
                seed: run_cfg.dataset.seed + 1,
                ..run_cfg.dataset.clone()
            };
            let val_path = dir.path().join("val.jsonl");
            generate_dataset(&val_cfg, &val_path)?;
            let train_data = load_dataset(&train_path)?;
            let val_data = load_dataset(&val_path)?;
            let vocab = max_vocab(&run_cfg.dataset)?;
            let metrics_path = out.with_extension("metrics.jsonl");
            let mut metrics_file = std::fs::File::create(&metrics_path)?;
            let outcome = train(
                run_cfg.model,
                &run_cfg.train,
                &train_data,
                &val_data,
                &vocab,
                Some(&mut metrics_file),
            )?;
            save_checkpoint(&outcome.model, &out)?;
            eprintln!(
                "final accuracy {:.4}{} — checkpoint {}, metrics {}",
                outcome.final_accuracy,
                if outcome.diverged { " (diverged)" } else { "" },
                out.display(),
                metrics_path.display()
            );
            Ok(!outcome.diverged)
        }
        Command::Bench { grid, out, jobs } => {
            if jobs > 1 {
                eprintln!("note: --jobs {jobs} requested; cells run sequentially");
            }
            let spec: GridSpec = read_json(&grid)?;
            let work_dir = out.with_extension("work");
            let report = run_grid(&spec, &work_dir)?;
            let text = emit_report(&report, ReportFormat::Json)?;
            std::fs::write(&out, &text)?;
            eprintln!(
                "{} cells ({} executed, {:.1}s) -> {}",
                report.cells.len(),
                report.executed_cells,
                report.total_wall_secs,
                out.display()
            );
            Ok(true)
        }
        Command::Report { input, format, out } => {
            let report: BenchmarkReport = read_json(&input)?;
            let fmt: ReportFormat = format.parse()?;
            let text = emit_report(&report, fmt)?;
            write_or_print(&text, out.as_ref())?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    // clap exits with code 2 itself on usage errors / missing subcommand
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
