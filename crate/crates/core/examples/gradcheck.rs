//! Finite-difference gradient check of the full loss of a small PRISM model.

use prism::nn::gradcheck::{check_gradients, GradCheckOptions};
use prism::nn::model::{Batch, CopyPolicy, ForwardOptions, Model, ModelConfig, ModelKind};
use prism::nn::Tensor;
use prism::tasks::{generators, PAD};

fn main() -> prism::Result<()> {
    let mut cfg = ModelConfig::tiny(ModelKind::Prism);
    cfg.copy_policy = CopyPolicy::EveryFifthQuery;
    let model = Model::new(cfg, 0)?;
    let seqs: Vec<(Vec<usize>, usize)> = (0..2)
        .map(|i| generators::gen_reverse(3, i).map(|e| (e.tokens, e.supervised_from)))
        .collect::<prism::Result<_>>()?;
    let batch = Batch::new(&seqs, PAD);
    let inputs: Vec<Tensor> = model.params.entries.iter().map(|e| e.value.clone()).collect();
    let reports = check_gradients(
        &inputs,
        |g, v| model.loss(g, v, &batch, &ForwardOptions::default()).expect("forward").0,
        GradCheckOptions { max_entries: 16, ..Default::default() },
    );
    for (e, r) in model.params.entries.iter().zip(&reports) {
        println!("{:<28} {:>3} entries  max rel error {:.2e}", e.name, r.checked, r.max_rel_error);
    }
    Ok(())
}
