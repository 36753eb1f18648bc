//! The `prism` command line: gen, train, eval, oracle-check and inspect.
//!
//! Exit codes: 0 success, 1 user error (bad flags, config or data), 2
//! internal failure (numerical divergence, oracle mismatch, bugs).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::error::PrismError;
use crate::harness::eval::evaluate_exact_match;
use crate::harness::metrics::{write_json, SCHEMA_VERSION};
use crate::harness::train::{eval_seed, to_batch, train, Checkpoint, Progress, RunOptions, TrainConfig, TrainData};
use crate::nn::model::{Model, ModelKind};
use crate::oracle::check_filter_against_oracle;
use crate::tasks::dataset::{synthesize, write_jsonl};
use crate::tasks::scan::{ingest_scan_cot, write_length_split};
use crate::tasks::{Task, TaskExample, Tokenizer};

/// Environment variable naming the data root. Relative `--out` and
/// `--scan-dir` paths resolve against it.
pub const DATA_ROOT_ENV: &str = "PRISM_DATA_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "prism", version, about = "Histogram-filter relative positions for length extrapolation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write JSONL train/test splits.
    Gen(GenArgs),
    /// Train a model with the curriculum and periodic evaluation.
    Train(TrainArgs),
    /// Exact-match accuracy of a checkpoint per length.
    Eval(EvalArgs),
    /// Compare the filter with exhaustive path enumeration.
    OracleCheck(OracleArgs),
    /// Dump gates, histograms and attention for one input.
    Inspect(InspectArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON training config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Comma-separated list, e.g. 10,15,20.
    #[arg(long, value_delimiter = ',')]
    pub eval_lengths: Option<Vec<usize>>,
    /// SCAN directory holding the length split.
    #[arg(long)]
    pub scan_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    /// Examples per split (per eval length for the test split).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Regenerate the SCAN length split from the grammar into --scan-dir.
    #[arg(long)]
    pub synthesize_scan: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Examples per length.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Filter steps per trial (at most 12).
    #[arg(long, default_value_t = 6)]
    pub steps: usize,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[command(flatten)]
    pub common: Common,
    /// Trained checkpoint; without it an untrained model is inspected.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Input text; defaults to a generated example.
    #[arg(long)]
    pub text: Option<String>,
}

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<PrismError> for CliError {
    fn from(e: PrismError) -> Self {
        let code = match &e {
            PrismError::Config(_)
            | PrismError::UnknownSymbol(_)
            | PrismError::TokenOutOfRange(_)
            | PrismError::Overlength { .. }
            | PrismError::Data(_)
            | PrismError::OracleCap { .. }
            | PrismError::Json(_) => EXIT_USER,
            PrismError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USER,
            _ => EXIT_INTERNAL,
        };
        CliError { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        PrismError::Io(e).into()
    }
}

type CliResult = std::result::Result<(), CliError>;

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

fn rooted(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        data_root().join(p)
    }
}

fn scan_dir(c: &Common) -> PathBuf {
    rooted(c.scan_dir.as_deref().unwrap_or(Path::new("SCAN")))
}

/// Config file (if any), then flags.
pub fn resolve_train_config(c: &Common, steps: Option<u64>, kind: Option<ModelKind>) -> Result<TrainConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| PrismError::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| PrismError::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::desk(c.task.unwrap_or(Task::Copy), kind.unwrap_or(ModelKind::Prism)),
    };
    if let Some(t) = c.task {
        cfg.task = t;
    }
    if let Some(k) = kind {
        cfg.model.kind = k;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(m) = c.max_len {
        let cur = &mut cfg.curriculum;
        cur.base_len = m;
        cur.cap = m;
        cur.warmup_len = cur.warmup_len.min(m);
        cur.min_len = cur.min_len.min(m);
    }
    if let Some(l) = &c.eval_lengths {
        cfg.eval_lengths = l.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_data(cfg: &TrainConfig, c: &Common) -> Result<TrainData, CliError> {
    if cfg.task.is_synthetic() {
        return Ok(TrainData::Synthetic);
    }
    let split = ingest_scan_cot(&scan_dir(c))?;
    Ok(TrainData::Pool { train: split.train, test: split.test })
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> CliResult {
    let c = &a.common;
    let task = c.task.ok_or_else(|| PrismError::Config("--task is required".into()))?;
    let seed = c.seed.unwrap_or(0);
    let dir = rooted(c.out.as_deref().unwrap_or(Path::new("data")));
    if task == Task::ScanCot {
        let sd = scan_dir(c);
        if a.synthesize_scan {
            let (tr, te) = write_length_split(&sd)?;
            writeln!(out, "wrote SCAN length split to {} ({tr} train, {te} test)", sd.display())?;
        }
        let split = ingest_scan_cot(&sd)?;
        write_jsonl(&dir.join("train.jsonl"), &split.train)?;
        write_jsonl(&dir.join("test.jsonl"), &split.test)?;
        let (tr, te) = split.summaries();
        let summary = json!({ "schema_version": SCHEMA_VERSION, "task": task, "train": tr, "test": te });
        write_json(&dir.join("summary.json"), &summary)?;
        writeln!(out, "{}", serde_json::to_string_pretty(&summary).map_err(PrismError::from)?)?;
        return Ok(());
    }
    let max_len = c.max_len.unwrap_or(10);
    let eval = c.eval_lengths.clone().unwrap_or_else(|| vec![max_len, max_len * 3 / 2, 2 * max_len]);
    // Train seeds count up from seed << 32; test sets use eval_seed, far away.
    let train_lengths: Vec<usize> = (1..=max_len).collect();
    let train_set = synthesize(task, &train_lengths, a.n, seed << 32)?;
    let mut test_set: Vec<TaskExample> = Vec::new();
    for &l in &eval {
        test_set.extend(synthesize(task, &[l], a.n, eval_seed(seed, l))?);
    }
    write_jsonl(&dir.join("train.jsonl"), &train_set)?;
    write_jsonl(&dir.join("test.jsonl"), &test_set)?;
    writeln!(out, "{task}: {} train examples (lengths 1..={max_len}), {} test examples (lengths {eval:?}) in {}", train_set.len(), test_set.len(), dir.display())?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> CliResult {
    let cfg = resolve_train_config(&a.common, a.steps, a.model)?;
    let data = train_data(&cfg, &a.common)?;
    let resume = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let dir = rooted(a.common.out.as_deref().unwrap_or(Path::new("runs/latest")));
    let mut log = |p: &Progress| {
        eprintln!("step {:>7}  loss {:.4}  smoothed {:.4}  max_len {:>3}  {:.0}s", p.step, p.loss, p.smoothed_loss, p.max_len, p.elapsed);
    };
    let run = RunOptions { out_dir: Some(dir.clone()), resume, progress: Some(&mut log) };
    let res = train(&cfg, &data, run)?;
    writeln!(out, "trained {} steps, final loss {:.4}; artifacts in {}", res.summary.steps, res.summary.final_loss, dir.display())?;
    writeln!(out, "length  last_exact_match  top3_mean")?;
    for (l, t) in &res.summary.top3 {
        let last = res.summary.last.get(l).copied().unwrap_or(f64::NAN);
        writeln!(out, "{l:>6}  {last:>16.3}  {:>9.3}{}", t.mean, if t.flagged { " (fewer than 3 points)" } else { "" })?;
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let model = ck.model()?;
    let mut cfg = ck.config.clone();
    if let Some(l) = &a.common.eval_lengths {
        cfg.eval_lengths = l.clone();
    }
    if let Some(n) = a.n {
        cfg.eval_examples = n;
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    let examples = match train_data(&cfg, &a.common)? {
        TrainData::Pool { test, .. } => test,
        TrainData::Synthetic => {
            let mut v = Vec::new();
            for &l in &cfg.eval_lengths {
                v.extend(synthesize(cfg.task, &[l], cfg.eval_examples, eval_seed(cfg.seed, l))?);
            }
            v
        }
    };
    let acc = evaluate_exact_match(&model, &examples, cfg.eval_chunk)?;
    writeln!(out, "{} checkpoint at step {}", cfg.task, ck.step)?;
    writeln!(out, "length  examples  exact_match  token_accuracy")?;
    for (l, a) in &acc {
        writeln!(out, "{l:>6}  {:>8}  {:>11.3}  {:>14.3}", a.examples, a.exact_match(), a.token_accuracy())?;
    }
    if let Some(p) = &a.common.out {
        let p = rooted(p);
        let rows: BTreeMap<usize, _> = acc.iter().map(|(l, a)| (*l, json!({"examples": a.examples, "exact_match": a.exact_match(), "token_accuracy": a.token_accuracy()}))).collect();
        write_json(&p, &json!({"schema_version": SCHEMA_VERSION, "task": cfg.task, "step": ck.step, "lengths": rows}))?;
    }
    Ok(())
}

fn cmd_oracle(a: &OracleArgs, out: &mut dyn Write) -> CliResult {
    let mut worst: f64 = 0.0;
    let mut paths = 0;
    for t in 0..a.trials {
        let r = check_filter_against_oracle(a.steps, a.seed.wrapping_add(t as u64))?;
        worst = worst.max(r.max_abs_error);
        paths = r.paths;
    }
    writeln!(out, "{} trials of {} steps ({paths} paths each): max deviation {worst:.3e}", a.trials, a.steps)?;
    if worst < a.tolerance {
        writeln!(out, "ok (tolerance {:.0e})", a.tolerance)?;
        Ok(())
    } else {
        Err(CliError { code: EXIT_INTERNAL, message: format!("filter deviates from the path oracle by {worst:.3e}") })
    }
}

fn cmd_inspect(a: &InspectArgs, out: &mut dyn Write) -> CliResult {
    let c = &a.common;
    let (model, task) = match &a.checkpoint {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            (ck.model()?, c.task.unwrap_or(ck.config.task))
        }
        None => {
            let cfg = resolve_train_config(c, None, a.model)?;
            (Model::new(cfg.model.clone(), cfg.seed)?, cfg.task)
        }
    };
    let tokens = match &a.text {
        Some(t) => Tokenizer::get().encode(t)?,
        None if task.is_synthetic() => {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(c.seed.unwrap_or(0));
            task.sample(c.max_len.unwrap_or(10), &mut rng)?.tokens
        }
        None => return Err(PrismError::Config("--text is required for scan-cot".into()).into()),
    };
    let example = TaskExample { task, text: String::new(), tokens: tokens.clone(), supervised_from: tokens.len(), length: 0 };
    let batch = to_batch(std::slice::from_ref(&example));
    let trace = model.trace(&batch)?;
    let dir = rooted(c.out.as_deref().unwrap_or(Path::new("inspect")));
    fs::create_dir_all(&dir)?;
    let tok = Tokenizer::get();
    let s = tokens.len();
    let mut gates = String::from("schema_version,layer,cursor,t,token,reset,incr,decr,keep,top1_position\n");
    let mut hists = String::from("schema_version,layer,cursor,t,position,probability\n");
    let mut means = [0.0; 4];
    let mut count = 0.0;
    for (li, pt) in trace.prism.iter().enumerate() {
        let n = pt.reset.shape[0];
        let p = pt.histograms.shape[3];
        for h in 0..n {
            for t in 0..s {
                let r = pt.reset.at(&[h, 0, t]);
                let act: Vec<f64> = (0..3).map(|k| pt.actions.at(&[h, 0, t, k])).collect();
                let row = &pt.histograms.data[(h * s + t) * p..(h * s + t + 1) * p];
                let top = crate::nn::model::argmax(row);
                gates.push_str(&format!("{SCHEMA_VERSION},{li},{h},{t},{},{r},{},{},{},{top}\n", tok.symbol(tokens[t])?, act[0], act[1], act[2]));
                for (k, v) in row.iter().enumerate() {
                    if *v > 1e-12 {
                        hists.push_str(&format!("{SCHEMA_VERSION},{li},{h},{t},{k},{v}\n"));
                    }
                }
                for (m, v) in means.iter_mut().zip([r, act[0], act[1], act[2]]) {
                    *m += v;
                }
                count += 1.0;
            }
        }
    }
    let mut attn = String::from("schema_version,layer,head,query,key,probability\n");
    for (li, at) in trace.attention.iter().enumerate() {
        let heads = at.shape[1];
        for h in 0..heads {
            for q in 0..s {
                for k in 0..=q {
                    attn.push_str(&format!("{SCHEMA_VERSION},{li},{h},{q},{k},{}\n", at.at(&[0, h, q, k])));
                }
            }
        }
    }
    fs::write(dir.join("gates.csv"), gates)?;
    fs::write(dir.join("histograms.csv"), hists)?;
    fs::write(dir.join("attention.csv"), attn)?;
    writeln!(out, "input: {}", tok.decode(&tokens, task.style())?)?;
    if count > 0.0 {
        let m: Vec<f64> = means.iter().map(|v| v / count).collect();
        writeln!(out, "mean gate probabilities: reset {:.3}, incr {:.3}, decr {:.3}, keep {:.3}", m[0], m[1], m[2], m[3])?;
    } else {
        writeln!(out, "model has no PRISM layers; only attention was dumped")?;
    }
    writeln!(out, "wrote gates.csv, histograms.csv, attention.csv to {}", dir.display())?;
    Ok(())
}

/// Runs one command, writing human-readable output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::OracleCheck(a) => cmd_oracle(a, out),
        Command::Inspect(a) => cmd_inspect(a, out),
    }
}

/// Parses arguments, runs, reports errors on stderr and returns the exit
/// code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
