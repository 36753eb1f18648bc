//! Short training run on reversal with a small model, followed by a
//! per-length exact-match table and the top-3 summary.

use prism::harness::eval::{evaluate_exact_match, report_top3};
use prism::harness::train::{eval_sets, train, RunOptions, TrainConfig, TrainData};
use prism::harness::Curriculum;
use prism::nn::model::ModelKind;
use prism::tasks::Task;

fn main() -> prism::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let mut cfg = TrainConfig::desk(Task::Reverse, ModelKind::Prism);
    cfg.steps = steps;
    cfg.batch_size = 16;
    cfg.curriculum = Curriculum::flat(6);
    cfg.eval_lengths = vec![6, 8, 10];
    cfg.eval_examples = 50;
    cfg.eval_every = (steps / 4).max(1);
    cfg.eval_loss_gate = f64::MAX;

    let out = train(&cfg, &TrainData::Synthetic, RunOptions::default())?;
    println!("final loss {:.4} after {} steps", out.summary.final_loss, out.summary.steps);

    let examples = eval_sets(&cfg, &TrainData::Synthetic)?;
    println!("length  exact_match  token_accuracy");
    for (len, acc) in evaluate_exact_match(&out.model, &examples, cfg.eval_chunk)? {
        println!("{len:>6}  {:>11.3}  {:>14.3}", acc.exact_match(), acc.token_accuracy());
    }
    for (len, t) in report_top3(&out.summary.records) {
        println!("top-3 mean at length {len}: {:.3} over {} evaluations", t.mean, t.count);
    }
    Ok(())
}
