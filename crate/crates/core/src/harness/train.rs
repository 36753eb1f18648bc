//! Deterministic curriculum training with periodic evaluation and
//! checkpoints.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::curriculum::Curriculum;
use super::eval::{evaluate_exact_match, report_top3, EvalRecord};
use super::metrics::{append_csv, write_json, RunSummary, SCHEMA_VERSION};
use crate::error::{PrismError, Result};
use crate::nn::graph::{Graph, ParamStore};
use crate::nn::model::{Batch, ForwardOptions, Model, ModelConfig, ModelKind};
use crate::nn::optim::{lr_scale, AdamW, OptimConfig};
use crate::tasks::dataset::synthesize;
use crate::tasks::{Task, TaskExample, PAD};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: Task,
    pub seed: u64,
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of `steps` spent in linear warmup.
    pub warmup_frac: f64,
    /// Global gradient-norm clip; `None` disables it.
    pub grad_clip: Option<f64>,
    pub curriculum: Curriculum,
    pub eval_lengths: Vec<usize>,
    /// Held-out examples per eval length.
    pub eval_examples: usize,
    pub eval_every: u64,
    /// Periodic evaluation starts once the smoothed loss drops below this.
    pub eval_loss_gate: f64,
    pub eval_chunk: usize,
    pub checkpoint_every: Option<u64>,
    pub log_every: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk(Task::Copy, ModelKind::Prism)
    }
}

impl TrainConfig {
    pub fn desk(task: Task, kind: ModelKind) -> Self {
        Self {
            task,
            seed: 0,
            steps: 30_000,
            batch_size: 32,
            lr: 1e-3,
            warmup_frac: 0.05,
            grad_clip: Some(1.0),
            curriculum: Curriculum::default(),
            eval_lengths: vec![10, 15, 20, 30, 40],
            eval_examples: 200,
            eval_every: 1000,
            eval_loss_gate: 0.1,
            eval_chunk: 50,
            checkpoint_every: Some(1000),
            log_every: 100,
            model: ModelConfig::desk(kind),
        }
    }

    /// Full-scale settings; far beyond a CPU budget.
    pub fn full(task: Task, kind: ModelKind) -> Self {
        Self {
            steps: 150_000,
            batch_size: 100,
            lr: 9e-5,
            curriculum: Curriculum::full(),
            eval_examples: 1000,
            model: ModelConfig::full(kind),
            ..Self::desk(task, kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.curriculum.validate()?;
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_chunk == 0 {
            return Err(PrismError::Config("batch_size, eval_every and eval_chunk must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(PrismError::Config("lr must be positive and warmup_frac in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn optim(&self) -> OptimConfig {
        OptimConfig::with_lr(self.lr)
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.steps as f64 * self.warmup_frac).round() as u64
    }
}

/// Where training and evaluation examples come from.
#[derive(Clone, Debug)]
pub enum TrainData {
    /// Sampled on the fly from the task generator.
    Synthetic,
    /// Fixed pools, e.g. an ingested SCAN split. Test examples are grouped by
    /// their own lengths.
    Pool { train: Vec<TaskExample>, test: Vec<TaskExample> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub step: u64,
    pub config: TrainConfig,
    pub params: ParamStore,
    pub optimizer: AdamW,
    /// Data RNG position, as a decimal string.
    pub rng_word_pos: String,
    pub smoothed_loss: Option<f64>,
    pub records: Vec<EvalRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        write_json(&tmp, self)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| PrismError::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.schema_version != SCHEMA_VERSION {
            return Err(PrismError::Data(format!("checkpoint schema {} unsupported", ck.schema_version)));
        }
        Ok(ck)
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.config.model.clone(), self.params.clone())
    }

    /// Drops the optimizer moments; the result still evaluates and resumes
    /// (with fresh moments) at a third of the size.
    pub fn weights_only(mut self) -> Self {
        self.optimizer.m.clear();
        self.optimizer.v.clear();
        self
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Progress {
    pub step: u64,
    pub loss: f64,
    pub smoothed_loss: f64,
    pub max_len: usize,
    pub elapsed: f64,
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Directory for `metrics.csv`, `checkpoint.json`, `summary.json` and
    /// `config.json`.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    pub progress: Option<&'a mut dyn FnMut(&Progress)>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub summary: RunSummary,
    pub losses: Vec<(u64, f64)>,
}

fn data_rng(seed: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1);
    r
}

/// Base seed of the held-out set at `length`; disjoint from training draws,
/// which use a separate stream.
pub fn eval_seed(seed: u64, length: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (0xE7A1 << 32) ^ (length as u64) << 20
}

/// Held-out sets, one per eval length (or per pool length).
pub fn eval_sets(cfg: &TrainConfig, data: &TrainData) -> Result<Vec<TaskExample>> {
    match data {
        TrainData::Pool { test, .. } => Ok(test.clone()),
        TrainData::Synthetic => {
            let mut out = Vec::new();
            for &l in &cfg.eval_lengths {
                out.extend(synthesize(cfg.task, &[l], cfg.eval_examples, eval_seed(cfg.seed, l))?);
            }
            Ok(out)
        }
    }
}

fn sample_batch(cfg: &TrainConfig, data: &TrainData, step: u64, rng: &mut ChaCha8Rng) -> Result<Vec<TaskExample>> {
    let hi = cfg.curriculum.max_len_at(step);
    let lo = cfg.curriculum.min_len.min(hi);
    match data {
        TrainData::Synthetic => (0..cfg.batch_size).map(|_| {
            let l = rng.gen_range(lo..=hi);
            cfg.task.sample(l, rng)
        }).collect(),
        TrainData::Pool { train, .. } => {
            if train.is_empty() {
                return Err(PrismError::Data("empty training pool".into()));
            }
            let eligible: Vec<&TaskExample> = train.iter().filter(|e| e.length <= hi).collect();
            let pool: Vec<&TaskExample> = if eligible.is_empty() { train.iter().collect() } else { eligible };
            Ok((0..cfg.batch_size).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect())
        }
    }
}

pub fn to_batch(examples: &[TaskExample]) -> Batch {
    let seqs: Vec<(Vec<usize>, usize)> = examples.iter().map(|e| (e.tokens.clone(), e.supervised_from)).collect();
    Batch::new(&seqs, PAD)
}

/// Summary of the gates and sharpening exponents, for divergence reports.
pub fn gate_statistics(model: &Model, batch: &Batch) -> String {
    let mut lines = Vec::new();
    for (i, e) in model.params.entries.iter().enumerate() {
        let bad = e.value.data.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            lines.push(format!("param {} ({i}) has {bad} non-finite entries", e.name));
        }
        if e.name.ends_with("gamma_raw") {
            let g: Vec<f64> = e.value.data.iter().map(|r| r.exp() + 1.0).collect();
            let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            lines.push(format!("{}: gamma in [{lo:.4}, {hi:.4}]", e.name));
        }
    }
    match model.trace(batch) {
        Ok(trace) => {
            for (i, pt) in trace.prism.iter().enumerate() {
                let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len().max(1) as f64;
                let a = &pt.actions.data;
                let col = |k: usize| mean(&a.iter().skip(k).step_by(3).copied().collect::<Vec<_>>());
                lines.push(format!(
                    "prism{i}: mean reset {:.4}, incr {:.4}, decr {:.4}, keep {:.4}, non-finite histogram entries {}",
                    mean(&pt.reset.data),
                    col(0),
                    col(1),
                    col(2),
                    pt.histograms.data.iter().filter(|v| !v.is_finite()).count()
                ));
            }
        }
        Err(e) => lines.push(format!("trace failed: {e}")),
    }
    lines.join("; ")
}

fn evaluate(model: &Model, cfg: &TrainConfig, sets: &[TaskExample], step: u64, loss: f64) -> Result<Vec<EvalRecord>> {
    let acc = evaluate_exact_match(model, sets, cfg.eval_chunk)?;
    Ok(acc
        .into_iter()
        .map(|(l, a)| EvalRecord {
            step,
            eval_length: l,
            exact_match: a.exact_match(),
            token_accuracy: a.token_accuracy(),
            loss,
        })
        .collect())
}

/// Runs (or resumes) training. Identical configs give identical results.
pub fn train(cfg: &TrainConfig, data: &TrainData, mut run: RunOptions<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let (mut model, mut opt, mut rng, mut step, mut smoothed, mut records) = match run.resume.take() {
        Some(ck) => {
            if ck.config.model != cfg.model {
                return Err(PrismError::Config("checkpoint model config differs from the run config".into()));
            }
            let mut rng = data_rng(cfg.seed);
            let pos: u128 = ck.rng_word_pos.parse().map_err(|_| PrismError::Data("bad rng position".into()))?;
            rng.set_word_pos(pos);
            let model = ck.model()?;
            let opt = if ck.optimizer.m.len() == model.params.len() {
                ck.optimizer
            } else {
                // Weights-only checkpoint: fresh moments, schedule continues.
                AdamW { step: ck.step, ..AdamW::new(cfg.optim(), &model.params) }
            };
            (model, opt, rng, ck.step, ck.smoothed_loss, ck.records)
        }
        None => {
            let model = Model::new(cfg.model.clone(), cfg.seed)?;
            let opt = AdamW::new(cfg.optim(), &model.params);
            (model, opt, data_rng(cfg.seed), 0, None, Vec::new())
        }
    };
    if let Some(dir) = &run.out_dir {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("config.json"), cfg)?;
    }
    let sets = eval_sets(cfg, data)?;
    let warmup = cfg.warmup_steps();
    let mut losses = Vec::new();
    let mut last_loss = f64::NAN;

    let checkpoint = |model: &Model, opt: &AdamW, rng: &ChaCha8Rng, step: u64, smoothed: Option<f64>, records: &[EvalRecord]| Checkpoint {
        schema_version: SCHEMA_VERSION,
        step,
        config: cfg.clone(),
        params: model.params.clone(),
        optimizer: opt.clone(),
        rng_word_pos: rng.get_word_pos().to_string(),
        smoothed_loss: smoothed,
        records: records.to_vec(),
    };

    while step < cfg.steps {
        let examples = sample_batch(cfg, data, step, &mut rng)?;
        let batch = to_batch(&examples);
        let opts = ForwardOptions {
            ape_offsets: model.random_offsets(batch.batch, batch.seq, &mut rng),
            ..Default::default()
        };
        let g = Graph::new();
        let params = g.bind(&model.params);
        let (total, ce) = model.loss(&g, &params, &batch, &opts)?;
        let loss = ce.value().item();
        let grads = g.backward(total);
        let mut pg = grads.param_grads(&model.params);
        drop(g);
        let norm = pg.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(PrismError::Diverged {
                step: step as usize,
                diagnostic: format!("loss {loss}, grad norm {norm}; {}", gate_statistics(&model, &batch)),
            });
        }
        if let Some(clip) = cfg.grad_clip {
            if norm > clip {
                let s = clip / norm;
                pg.iter_mut().flatten().for_each(|x| *x *= s);
            }
        }
        opt.update(&mut model.params, &pg, lr_scale(step, warmup));
        step += 1;
        last_loss = loss;
        let sm = smoothed.map_or(loss, |s| 0.95 * s + 0.05 * loss);
        smoothed = Some(sm);
        if step % cfg.log_every == 0 || step == cfg.steps {
            losses.push((step, loss));
            if let Some(cb) = run.progress.as_mut() {
                cb(&Progress {
                    step,
                    loss,
                    smoothed_loss: sm,
                    max_len: cfg.curriculum.max_len_at(step - 1),
                    elapsed: start.elapsed().as_secs_f64(),
                });
            }
        }
        let due = (step % cfg.eval_every == 0 && sm < cfg.eval_loss_gate) || step == cfg.steps;
        if due && !sets.is_empty() {
            let new = evaluate(&model, cfg, &sets, step, sm)?;
            if let Some(dir) = &run.out_dir {
                append_csv(&dir.join("metrics.csv"), cfg.task, &new)?;
            }
            records.extend(new);
        }
        if let (Some(dir), Some(every)) = (&run.out_dir, cfg.checkpoint_every) {
            if step % every == 0 && step < cfg.steps {
                checkpoint(&model, &opt, &rng, step, smoothed, &records).save(&dir.join("checkpoint.json"))?;
            }
        }
    }

    let ck = checkpoint(&model, &opt, &rng, step, smoothed, &records);
    let last_step = records.iter().map(|r| r.step).max();
    let last: BTreeMap<usize, f64> =
        records.iter().filter(|r| Some(r.step) == last_step).map(|r| (r.eval_length, r.exact_match)).collect();
    let summary = RunSummary {
        schema_version: SCHEMA_VERSION,
        task: cfg.task,
        model_kind: format!("{:?}", cfg.model.kind).to_lowercase(),
        seed: cfg.seed,
        steps: step,
        final_loss: smoothed.unwrap_or(last_loss),
        wall_seconds: start.elapsed().as_secs_f64(),
        top3: report_top3(&records),
        last,
        records: records.clone(),
    };
    if let Some(dir) = &run.out_dir {
        ck.save(&dir.join("checkpoint.json"))?;
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(TrainOutcome { model, checkpoint: ck, summary, losses })
}
