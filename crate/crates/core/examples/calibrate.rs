//! Desk-scale grid calibration: trains a few architectures on the joint
//! recall task and prints per-cell accuracy and wall time.
//!
//! Usage: cargo run --release -p recall-core --example calibrate -- [steps] [d] [batch]

use recall_core::bench::{run_grid, ArchSpec, GridSpec};
use recall_core::nn::model::{HybridModelConfig, PatternKind};
use recall_core::nn::train::TrainConfig;
use recall_core::patterns::{BinRule, LshConfig};
use recall_core::task::DatasetConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let d: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(16);
    let batch: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(8);
    let budget: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(16);
    let alpha: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let lr: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(3e-3);
    let base = HybridModelConfig {
        layers: 2,
        d,
        vocab_size: 5 + 5 + 8,
        patterns: vec![PatternKind::None, PatternKind::None],
        budget,
        lsh: LshConfig { h: 3, rule: BinRule::SignBit, k_bin: 8, seed: 0 },
        gate_init: 0.0,
        widen_factor: 1,
        stride: 4,
    };
    let arch = |name: &str, kinds: Vec<PatternKind>, widen: usize| ArchSpec {
        name: name.into(),
        model: HybridModelConfig { patterns: kinds, widen_factor: widen, ..base.clone() },
    };
    let grid = GridSpec {
        archs: vec![
            arch("base+2x", vec![PatternKind::None, PatternKind::None], 2),
            arch("+KS", vec![PatternKind::Ks, PatternKind::Ks], 1),
            arch("+HAX", vec![PatternKind::Hax, PatternKind::Hax], 1),
        ],
        lrs: vec![lr],
        seeds: vec![0],
        dataset: DatasetConfig {
            levels: 2,
            size_low: 2,
            size_high: 5,
            value_size: 8,
            count: 2048,
            seed: 7,
        },
        val_count: 128,
        train: TrainConfig {
            steps,
            batch_size: batch,
            alpha,
            eval_every: steps.max(1),
            eval_instances: 128,
            ..TrainConfig::default()
        },
    };
    let dir = std::env::temp_dir().join(format!("calibrate-{steps}-{d}-{batch}-{budget}-{alpha}-{lr}"));
    let _ = std::fs::remove_dir_all(&dir);
    let report = run_grid(&grid, &dir).unwrap();
    for c in &report.cells {
        println!(
            "{:10} lr={:<7} seed={} acc={:.3} diverged={} {:.1}s",
            c.arch, c.lr, c.seed, c.accuracy, c.diverged, c.wall_secs
        );
    }
    println!("total {:.1}s", report.total_wall_secs);
}
