//! Traces a forward pass and prints, per position, the mean gate
//! probabilities and the mode of the first query cursor's histogram.
//!
//! ```text
//! cargo run --release --example inspect_gates -- [checkpoint.json]
//! ```

use prism::harness::Checkpoint;
use prism::nn::model::{Batch, Model, ModelConfig, ModelKind};
use prism::tasks::{generators, PAD, Tokenizer};

fn main() -> prism::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => Checkpoint::load(path.as_ref())?.model()?,
        None => Model::new(ModelConfig::desk(ModelKind::Prism), 0)?,
    };
    let ex = generators::gen_copy(6, 3)?;
    let batch = Batch::new(&[(ex.tokens.clone(), ex.supervised_from)], PAD);
    let trace = model.trace(&batch)?;
    let block = &trace.prism[0];
    let (n, s, p) = (block.reset.shape[0], batch.seq, block.histograms.shape[3]);
    let tok = Tokenizer::get();
    println!("{} histograms over {p} positions; input {}", n, ex.text);
    println!("pos tok   reset   incr   decr   keep  mode[0]");
    for t in 0..s {
        let mean = |f: &dyn Fn(usize) -> f64| (0..n).map(f).sum::<f64>() / n as f64;
        let reset = mean(&|c| block.reset.data[c * s + t]);
        let act = |a: usize| mean(&|c| block.actions.data[(c * s + t) * 3 + a]);
        let h = &block.histograms.data[t * p..(t + 1) * p];
        let mode = (0..p).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap_or(0);
        println!("{t:>3} {:<4} {reset:>6.3} {:>6.3} {:>6.3} {:>6.3} {mode:>8}", tok.symbol(ex.tokens[t])?, act(0), act(1), act(2));
    }
    println!("attention layers traced: {}", trace.attention.len());
    Ok(())
}
