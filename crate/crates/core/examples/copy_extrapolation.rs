//! Trains PRISM and the absolute-position baseline on copy with strings of
//! at most 10 digits, then reports exact match at longer lengths. Each run
//! also leaves `<kind>.weights.json` next to its directory.
//!
//! ```text
//! cargo run --release --example copy_extrapolation -- [steps] [out_dir] [prism|baseline|both] [seed]
//! ```

use std::path::PathBuf;

use prism::harness::train::{train, Progress, RunOptions, TrainConfig, TrainData};
use prism::nn::model::ModelKind;
use prism::tasks::Task;

fn main() -> prism::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let steps: u64 = args.first().and_then(|s| s.parse().ok()).unwrap_or(300);
    let out = PathBuf::from(args.get(1).cloned().unwrap_or_else(|| "runs/copy".into()));
    let which = args.get(2).map(String::as_str).unwrap_or("both");
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let kinds: Vec<ModelKind> = match which {
        "prism" => vec![ModelKind::Prism],
        "baseline" => vec![ModelKind::Baseline],
        _ => vec![ModelKind::Prism, ModelKind::Baseline],
    };
    for kind in kinds {
        let mut cfg = TrainConfig::desk(Task::Copy, kind);
        cfg.steps = steps;
        cfg.seed = seed;
        cfg.eval_lengths = vec![10, 15, 20];
        cfg.eval_every = (steps / 10).max(1);
        cfg.curriculum = cfg.curriculum.scaled(steps as f64 / 30_000.0);
        let name = format!("{kind:?}").to_lowercase();
        let mut log = |p: &Progress| {
            eprintln!("{name} step {:>6} loss {:.4} (smoothed {:.4}) max_len {} {:.0}s", p.step, p.loss, p.smoothed_loss, p.max_len, p.elapsed)
        };
        let run = RunOptions { out_dir: Some(out.join(&name)), progress: Some(&mut log), ..Default::default() };
        let res = train(&cfg, &TrainData::Synthetic, run)?;
        res.checkpoint.clone().weights_only().save(&out.join(format!("{name}.weights.json")))?;
        for (len, acc) in &res.summary.last {
            println!("{name} length {len}: exact match {:.3}", acc);
        }
    }
    Ok(())
}
