//! Regenerates the SCAN length split from the grammar, ingests it as
//! chain-of-thought examples and prints length statistics.
//!
//! ```text
//! cargo run --release --example scan_cot -- [dir]
//! ```

use std::path::PathBuf;

use prism::tasks::scan::{ingest_scan_cot, write_length_split, Command};

fn main() -> prism::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("scan_length"));
    let (ntr, nte) = write_length_split(&dir)?;
    println!("wrote {ntr} train and {nte} test commands to {}", dir.display());

    let split = ingest_scan_cot(&dir)?;
    let (tr, te) = split.summaries();
    for (name, s) in [("train", tr), ("test", te)] {
        let (lo, hi) = (s.action_lengths.keys().next().unwrap(), s.action_lengths.keys().last().unwrap());
        println!("{name}: {} examples, action lengths {lo}..={hi}, longest sequence {} tokens", s.examples, s.max_tokens);
    }

    let c = Command::parse("jump around right twice after walk left")?;
    println!("\n{}", c.cot_text());
    Ok(())
}
