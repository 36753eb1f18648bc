//! JSONL datasets: one example per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Task, TaskExample, Tokenizer};
use crate::error::{PrismError, Result};

#[derive(Serialize, Deserialize)]
struct Record {
    text: String,
    tokens: Vec<usize>,
    supervised_from: usize,
    #[serde(default)]
    length: usize,
}

/// Samples `count` examples with lengths drawn uniformly from `lengths`,
/// example `i` using seed `seed + i`.
pub fn synthesize(task: Task, lengths: &[usize], count: usize, seed: u64) -> Result<Vec<TaskExample>> {
    if lengths.is_empty() {
        return Err(PrismError::Config("no lengths to sample from".into()));
    }
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            task.sample(lengths[i % lengths.len()], &mut rng)
        })
        .collect()
}

pub fn write_jsonl(path: &Path, examples: &[TaskExample]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for e in examples {
        let rec = Record {
            text: e.text.clone(),
            tokens: e.tokens.clone(),
            supervised_from: e.supervised_from,
            length: e.length,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSONL file; tokens must agree with the re-tokenized text.
pub fn read_jsonl(path: &Path, task: Task) -> Result<Vec<TaskExample>> {
    let reader = BufReader::new(
        File::open(path).map_err(|e| PrismError::Data(format!("cannot open {}: {e}", path.display())))?,
    );
    let tok = Tokenizer::get();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| PrismError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let ex = TaskExample::from_text(task, rec.text, rec.length)?;
        if ex.tokens != rec.tokens || ex.supervised_from != rec.supervised_from {
            return Err(PrismError::Data(format!("{}:{}: tokens do not match text", path.display(), i + 1)));
        }
        if let Some(&bad) = ex.tokens.iter().find(|&&t| t >= tok.len()) {
            return Err(PrismError::TokenOutOfRange(bad));
        }
        out.push(ex);
    }
    Ok(out)
}
