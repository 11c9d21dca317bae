//! Benchmark grid runner: architecture × learning-rate × seed sweep with a
//! resumable on-disk ledger and Table-style report emission.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::HybridModelConfig;
use crate::nn::train::{train, TrainConfig};
use crate::task::{
    generate_dataset, load_dataset, manifest_path_for, max_vocab, DatasetConfig, DatasetManifest,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    pub model: HybridModelConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub archs: Vec<ArchSpec>,
    pub lrs: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Training dataset spec; the validation set reuses it with `seed + 1`
    /// and `val_count` instances.
    pub dataset: DatasetConfig,
    pub val_count: usize,
    /// Shared training knobs; `lr` and `seed` are overridden per cell.
    pub train: TrainConfig,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.archs.is_empty() || self.lrs.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig("archs, lrs, seeds must be nonempty".into()));
        }
        if self.val_count == 0 {
            return Err(Error::InvalidConfig("val_count must be positive".into()));
        }
        for arch in &self.archs {
            arch.model.validate()?;
        }
        self.dataset.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub arch: String,
    pub lr: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub diverged: bool,
    pub wall_secs: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSummary {
    pub arch: String,
    pub best_lr: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub grid: GridSpec,
    pub dataset_sha256: String,
    pub val_sha256: String,
    pub cells: Vec<CellResult>,
    pub summaries: Vec<ArchSummary>,
    pub total_wall_secs: f64,
    /// Cells actually trained in this invocation (completed ledger entries
    /// are reused, never recomputed).
    pub executed_cells: usize,
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect()
}

fn cell_path(dir: &Path, arch: &str, lr: f64, seed: u64) -> PathBuf {
    dir.join(format!("{}__{:e}__{}.json", sanitize(arch), lr, seed))
}

fn ensure_dataset(cfg: &DatasetConfig, path: &Path) -> Result<DatasetManifest> {
    let manifest = manifest_path_for(path);
    if path.exists() && manifest.exists() {
        let m: DatasetManifest = serde_json::from_reader(std::fs::File::open(&manifest)?)?;
        return Ok(m);
    }
    generate_dataset(cfg, path)
}

/// Per-architecture summary at the best learning rate (argmax of the mean
/// over seeds; ties break toward the smaller lr). Std is the population
/// standard deviation over seeds.
pub fn summarize(cells: &[CellResult], archs: &[String], lrs: &[f64]) -> Vec<ArchSummary> {
    let mut out = Vec::with_capacity(archs.len());
    for arch in archs {
        let mut best: Option<(f64, f64, f64)> = None; // (lr, mean, std)
        let mut sorted_lrs = lrs.to_vec();
        sorted_lrs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &lr in &sorted_lrs {
            let accs: Vec<f64> = cells
                .iter()
                .filter(|c| &c.arch == arch && c.lr == lr)
                .map(|c| c.accuracy)
                .collect();
            if accs.is_empty() {
                continue;
            }
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let var = accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accs.len() as f64;
            // strictly-greater keeps the smaller lr on ties (ascending order)
            if best.is_none_or(|(_, m, _)| mean > m) {
                best = Some((lr, mean, var.sqrt()));
            }
        }
        if let Some((lr, mean, std)) = best {
            out.push(ArchSummary { arch: arch.clone(), best_lr: lr, mean, std });
        }
    }
    out
}

/// Executes every (arch, lr, seed) cell, skipping cells already present in
/// the on-disk ledger under `work_dir/cells`. Divergent or failed cells are
/// recorded with accuracy 0 and a diagnostic; the grid keeps running.
pub fn run_grid(grid: &GridSpec, work_dir: &Path) -> Result<BenchmarkReport> {
    grid.validate()?;
    let started = Instant::now();
    std::fs::create_dir_all(work_dir.join("cells"))?;
    let train_path = work_dir.join("train.jsonl");
    let val_path = work_dir.join("val.jsonl");
    let train_manifest = ensure_dataset(&grid.dataset, &train_path)?;
    let val_cfg =
        DatasetConfig { count: grid.val_count, seed: grid.dataset.seed + 1, ..grid.dataset.clone() };
    let val_manifest = ensure_dataset(&val_cfg, &val_path)?;
    let train_data = load_dataset(&train_path)?;
    let val_data = load_dataset(&val_path)?;
    let vocab = max_vocab(&grid.dataset)?;

    let cells_dir = work_dir.join("cells");
    let mut cells = Vec::new();
    let mut executed = 0usize;
    for arch in &grid.archs {
        for &lr in &grid.lrs {
            for &seed in &grid.seeds {
                let path = cell_path(&cells_dir, &arch.name, lr, seed);
                if path.exists() {
                    let cell: CellResult =
                        serde_json::from_reader(std::fs::File::open(&path)?)?;
                    cells.push(cell);
                    continue;
                }
                let cell_start = Instant::now();
                let tcfg = TrainConfig { lr, seed, ..grid.train.clone() };
                let cell = match train(arch.model.clone(), &tcfg, &train_data, &val_data, &vocab, None)
                {
                    Ok(out) => CellResult {
                        arch: arch.name.clone(),
                        lr,
                        seed,
                        accuracy: if out.diverged { 0.0 } else { out.final_accuracy },
                        diverged: out.diverged,
                        wall_secs: cell_start.elapsed().as_secs_f64(),
                        diagnostic: out.diverged.then(|| "training diverged".to_string()),
                    },
                    Err(e) => CellResult {
                        arch: arch.name.clone(),
                        lr,
                        seed,
                        accuracy: 0.0,
                        diverged: true,
                        wall_secs: cell_start.elapsed().as_secs_f64(),
                        diagnostic: Some(e.to_string()),
                    },
                };
                // atomic completion mark: write to a temp file, then rename
                let tmp = path.with_extension("json.tmp");
                serde_json::to_writer(std::fs::File::create(&tmp)?, &cell)?;
                std::fs::rename(&tmp, &path)?;
                executed += 1;
                cells.push(cell);
            }
        }
    }
    let arch_names: Vec<String> = grid.archs.iter().map(|a| a.name.clone()).collect();
    let summaries = summarize(&cells, &arch_names, &grid.lrs);
    Ok(BenchmarkReport {
        grid: grid.clone(),
        dataset_sha256: train_manifest.checksum,
        val_sha256: val_manifest.checksum,
        cells,
        summaries,
        total_wall_secs: started.elapsed().as_secs_f64(),
        executed_cells: executed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?}"))),
        }
    }
}

/// Renders a report: csv is one row per cell, markdown is the architecture
/// summary table with the max-mean row bolded, json is lossless.
pub fn emit_report(report: &BenchmarkReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)?),
        ReportFormat::Csv => {
            let mut out = String::from("arch,lr,seed,accuracy\n");
            for c in &report.cells {
                out.push_str(&format!("{},{},{},{}\n", c.arch, c.lr, c.seed, c.accuracy));
            }
            Ok(out)
        }
        ReportFormat::Markdown => {
            let mut out = String::from("| architecture | best lr | accuracy |\n|---|---|---|\n");
            let best = report
                .summaries
                .iter()
                .map(|s| s.mean)
                .fold(f64::NEG_INFINITY, f64::max);
            for s in &report.summaries {
                let label = format!("{:.3} ± {:.3}", s.mean, s.std);
                if s.mean == best {
                    out.push_str(&format!("| **{}** | {} | **{}** |\n", s.arch, s.best_lr, label));
                } else {
                    out.push_str(&format!("| {} | {} | {} |\n", s.arch, s.best_lr, label));
                }
            }
            Ok(out)
        }
    }
}
