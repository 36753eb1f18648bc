//! Append-only metric CSV and per-run summary JSON.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{EvalRecord, Top3};
use crate::error::Result;
use crate::tasks::Task;

pub const SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: &str = "schema_version,step,task,eval_length,exact_match,token_accuracy,loss";

/// Appends records, writing the header when the file is new or empty.
pub fn append_csv(path: &Path, task: Task, records: &[EvalRecord]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    if fresh {
        writeln!(w, "{CSV_HEADER}")?;
    }
    for r in records {
        writeln!(
            w,
            "{SCHEMA_VERSION},{},{task},{},{},{},{}",
            r.step, r.eval_length, r.exact_match, r.token_accuracy, r.loss
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub task: Task,
    pub model_kind: String,
    pub seed: u64,
    pub steps: u64,
    pub final_loss: f64,
    pub wall_seconds: f64,
    pub top3: BTreeMap<usize, Top3>,
    pub last: BTreeMap<usize, f64>,
    pub records: Vec<EvalRecord>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
