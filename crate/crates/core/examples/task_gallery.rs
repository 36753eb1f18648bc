//! Prints one sample per synthetic task with its tokenization and the
//! supervised answer span.

use prism::tasks::scan::Command;
use prism::tasks::{Task, Tokenizer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> prism::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0));
    let tok = Tokenizer::get();
    for task in Task::ALL {
        let ex = if task.is_synthetic() { task.sample(6, &mut rng)? } else { Command::sample(&mut rng).to_example()? };
        println!("{task} (length {})", ex.length);
        println!("  text    {}", ex.text);
        println!("  prompt  {}", tok.decode(ex.prompt(), task.style())?);
        println!("  answer  {}", ex.answer_text());
        let syms: Vec<&str> = ex.tokens.iter().map(|&t| tok.symbol(t).unwrap_or("?")).collect();
        println!("  tokens  {} [{}]", ex.tokens.len(), syms.join("|"));
    }
    Ok(())
}
