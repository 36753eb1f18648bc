//! Exact-match evaluation and top-3 reporting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::model::{argmax, Batch, ForwardOptions, Model};
use crate::tasks::{TaskExample, PAD};

/// Anything that predicts the next token at every position of a batch.
pub trait Predictor {
    /// `[B * S]` predicted ids, row-major.
    fn predict(&self, batch: &Batch) -> Result<Vec<usize>>;
}

impl Predictor for Model {
    fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
        let logits = self.logits(batch, &ForwardOptions::default())?;
        let v = self.config.vocab_size;
        Ok(logits.data.chunks(v).map(argmax).collect())
    }
}

/// Per-example verdicts from teacher-forced predictions.
///
/// Greedy decoding reproduces the target exactly when every teacher-forced
/// argmax over the supervised region matches, so this is equivalent to
/// decoding autoregressively and comparing, stop token included.
pub fn grade(batch: &Batch, preds: &[usize]) -> Vec<(bool, usize, usize)> {
    (0..batch.batch)
        .map(|b| {
            let row = b * batch.seq..(b + 1) * batch.seq;
            let (mut right, mut total) = (0, 0);
            for i in row {
                if batch.mask[i] {
                    total += 1;
                    right += usize::from(preds[i] == batch.targets[i]);
                }
            }
            (total > 0 && right == total, right, total)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LengthAccuracy {
    pub examples: usize,
    pub exact: usize,
    pub tokens: usize,
    pub correct_tokens: usize,
}

impl LengthAccuracy {
    pub fn exact_match(&self) -> f64 {
        if self.examples == 0 {
            0.0
        } else {
            self.exact as f64 / self.examples as f64
        }
    }

    pub fn token_accuracy(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.correct_tokens as f64 / self.tokens as f64
        }
    }
}

/// Exact-match accuracy keyed by example length, batched in chunks.
pub fn evaluate_exact_match(
    model: &dyn Predictor,
    examples: &[TaskExample],
    chunk: usize,
) -> Result<BTreeMap<usize, LengthAccuracy>> {
    let mut by_len: BTreeMap<usize, Vec<&TaskExample>> = BTreeMap::new();
    for e in examples {
        by_len.entry(e.length).or_default().push(e);
    }
    let mut out = BTreeMap::new();
    for (len, group) in by_len {
        let mut acc = LengthAccuracy::default();
        for part in group.chunks(chunk.max(1)) {
            let seqs: Vec<(Vec<usize>, usize)> = part.iter().map(|e| (e.tokens.clone(), e.supervised_from)).collect();
            let batch = Batch::new(&seqs, PAD);
            let preds = model.predict(&batch)?;
            for (ok, right, total) in grade(&batch, &preds) {
                acc.examples += 1;
                acc.exact += usize::from(ok);
                acc.correct_tokens += right;
                acc.tokens += total;
            }
        }
        out.insert(len, acc);
    }
    Ok(out)
}

/// Greedy autoregressive check of one example.
pub fn greedy_exact_match(model: &Model, example: &TaskExample) -> Result<bool> {
    let target = example.target();
    let out = model.generate(example.prompt(), target.len(), crate::tasks::EOS)?;
    Ok(out == target)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Top3 {
    pub mean: f64,
    pub count: usize,
    /// Fewer than three evaluation points were available.
    pub flagged: bool,
}

/// Mean of the three best accuracies.
pub fn top3(accuracies: &[f64]) -> Option<Top3> {
    if accuracies.is_empty() {
        return None;
    }
    let mut v = accuracies.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let k = v.len().min(3);
    Some(Top3 { mean: v[..k].iter().sum::<f64>() / k as f64, count: k, flagged: k < 3 })
}

/// One evaluation point at one length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub eval_length: usize,
    pub exact_match: f64,
    pub token_accuracy: f64,
    pub loss: f64,
}

/// Per eval length, the top-3 mean over all recorded points.
pub fn report_top3(records: &[EvalRecord]) -> BTreeMap<usize, Top3> {
    let mut by_len: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_len.entry(r.eval_length).or_default().push(r.exact_match);
    }
    by_len.into_iter().filter_map(|(l, v)| top3(&v).map(|t| (l, t))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::generators::gen_copy;

    struct Teacher;
    impl Predictor for Teacher {
        fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
            Ok(batch.targets.clone())
        }
    }

    struct Constant(usize);
    impl Predictor for Constant {
        fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
            Ok(vec![self.0; batch.tokens.len()])
        }
    }

    /// The teacher, except one position of the first example is wrong.
    struct OffByOne(usize);
    impl Predictor for OffByOne {
        fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
            let mut p = batch.targets.clone();
            let i = (0..batch.seq).filter(|&i| batch.mask[i]).nth(self.0).unwrap();
            p[i] = (p[i] + 1) % 64;
            Ok(p)
        }
    }

    fn copies() -> Vec<TaskExample> {
        (0..40).map(|s| gen_copy(3 + (s as usize % 4), s).unwrap()).collect()
    }

    #[test]
    fn teacher_scores_one_and_constant_scores_zero() {
        let ex = copies();
        for acc in evaluate_exact_match(&Teacher, &ex, 7).unwrap().values() {
            assert_eq!(acc.exact_match(), 1.0);
        }
        for acc in evaluate_exact_match(&Constant(5), &ex, 7).unwrap().values() {
            assert_eq!(acc.exact_match(), 0.0);
            assert!(acc.token_accuracy() >= acc.exact_match());
        }
    }

    #[test]
    fn one_wrong_token_or_missing_stop_fails_the_example() {
        let ex = vec![gen_copy(6, 1).unwrap()];
        let n = ex[0].target().len();
        for k in 0..n {
            let acc = evaluate_exact_match(&OffByOne(k), &ex, 1).unwrap()[&6];
            assert_eq!(acc.exact, 0, "error at supervised position {k}");
            assert_eq!(acc.correct_tokens, n - 1);
        }
    }

    #[test]
    fn top3_order_statistics() {
        let t = top3(&[0.2, 0.9, 0.8, 0.7]).unwrap();
        assert!((t.mean - 0.8).abs() < 1e-12 && !t.flagged);
        let short = top3(&[0.4, 0.6]).unwrap();
        assert!((short.mean - 0.5).abs() < 1e-12 && short.flagged);
        assert!(top3(&[]).is_none());
        let mut v = vec![0.1, 0.5];
        let mut prev = top3(&v).unwrap().mean;
        for x in [0.05, 0.3, 0.9, 0.2, 0.95] {
            v.push(x);
            let m = top3(&v).unwrap().mean;
            // Only once three points exist does adding one never lower the mean.
            if v.len() > 3 {
                assert!(m >= prev - 1e-15);
            }
            prev = m;
        }
    }

    #[test]
    fn report_groups_by_length() {
        let rec = |step, l, a| EvalRecord { step, eval_length: l, exact_match: a, token_accuracy: a, loss: 0.0 };
        let r = report_top3(&[rec(1, 10, 0.5), rec(2, 10, 1.0), rec(1, 20, 0.1)]);
        assert_eq!(r.len(), 2);
        assert!((r[&10].mean - 0.75).abs() < 1e-12);
        assert!(r[&20].flagged);
    }
}
