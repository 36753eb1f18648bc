//! Position-aware attention scores and the per-head hybrid with content
//! scores.

use serde::{Deserialize, Serialize};

use crate::error::{PrismError, Result};
use crate::nn::ops::sigmoid;
use crate::nn::tensor::gemm;
use crate::posenc::PositionStream;

/// Learnable score coefficients of one attention layer.
///
/// `alpha` is stored unconstrained and used as `|alpha|`; `mu` is stored as
/// a logit and squashed into `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    pub heads: usize,
    pub cursors: usize,
    pub alpha: Vec<f64>,
    pub mu_logit: Vec<f64>,
}

impl ScoreParams {
    pub fn new(heads: usize, cursors: usize, alpha: f64, mu: f64) -> Self {
        Self { heads, cursors, alpha: vec![alpha; heads * cursors], mu_logit: vec![logit(mu); heads] }
    }

    /// Effective non-negative coefficient of `(head, cursor)`.
    pub fn beta(&self, h: usize, c: usize) -> f64 {
        self.alpha[h * self.cursors + c].abs()
    }

    pub fn mu(&self, h: usize) -> f64 {
        sigmoid(self.mu_logit[h])
    }

    pub fn set_mu(&mut self, h: usize, mu: f64) {
        self.mu_logit[h] = logit(mu);
    }
}

/// Inverse of the logistic map. The endpoints map to logits whose sigmoid
/// rounds to exactly 0 or 1 in `f64`.
pub fn logit(p: f64) -> f64 {
    if p >= 1.0 {
        40.0
    } else if p <= 0.0 {
        -800.0
    } else {
        (p / (1.0 - p)).ln()
    }
}

/// Score tensor laid out as `(batch, head, query time, key time)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTensor {
    pub data: Vec<f64>,
    pub batch: usize,
    pub heads: usize,
    pub seq: usize,
}

impl ScoreTensor {
    pub fn zeros(batch: usize, heads: usize, seq: usize) -> Self {
        Self { data: vec![0.0; batch * heads * seq * seq], batch, heads, seq }
    }

    pub fn at(&self, b: usize, h: usize, i: usize, j: usize) -> f64 {
        self.data[((b * self.heads + h) * self.seq + i) * self.seq + j]
    }

    fn same_shape(&self, other: &Self) -> bool {
        (self.batch, self.heads, self.seq) == (other.batch, other.heads, other.seq)
    }
}

/// Per-cursor inner products scaled by `|alpha|`, summed over cursors and
/// divided by `sqrt(C * d)`.
pub fn position_scores(enc_q: &PositionStream, enc_k: &PositionStream, params: &ScoreParams) -> Result<ScoreTensor> {
    if enc_q.shape() != enc_k.shape() {
        return Err(PrismError::Dimension(format!("query {:?} vs key {:?}", enc_q.shape(), enc_k.shape())));
    }
    if params.heads != enc_q.heads || params.cursors != enc_q.cursors {
        return Err(PrismError::Dimension(format!(
            "alpha is {}x{}, streams have {} heads x {} cursors",
            params.heads, params.cursors, enc_q.heads, enc_q.cursors
        )));
    }
    let dims = StreamDims::of(enc_q);
    let mut out = ScoreTensor::zeros(dims.batch, dims.heads, dims.seq);
    position_scores_raw(&enc_q.data, &enc_k.data, dims, &params.alpha, &mut out.data);
    Ok(out)
}

/// Per-head convex mix `mu * content + (1 - mu) * position`.
pub fn hybrid_scores(content: &ScoreTensor, position: &ScoreTensor, params: &ScoreParams) -> Result<ScoreTensor> {
    if !content.same_shape(position) {
        return Err(PrismError::Dimension("content and position score shapes differ".into()));
    }
    if params.heads != content.heads {
        return Err(PrismError::Dimension(format!("{} mu gates for {} heads", params.heads, content.heads)));
    }
    let mu: Vec<f64> = (0..params.heads).map(|h| params.mu(h)).collect();
    let mut out = content.clone();
    hybrid_raw(&content.data, &position.data, &mu, content.seq * content.seq, &mut out.data);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Slice kernels shared with the autodiff ops
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamDims {
    pub batch: usize,
    pub heads: usize,
    pub cursors: usize,
    pub seq: usize,
    pub width: usize,
}

impl StreamDims {
    pub fn of(p: &PositionStream) -> Self {
        Self { batch: p.batch, heads: p.heads, cursors: p.cursors, seq: p.seq, width: p.width }
    }

    pub fn from_shape(shape: &[usize]) -> Self {
        assert_eq!(shape.len(), 5, "position stream must be rank 5");
        Self { batch: shape[0], heads: shape[1], cursors: shape[2], seq: shape[3], width: shape[4] }
    }

    fn norm(&self) -> f64 {
        ((self.cursors * self.width) as f64).sqrt()
    }

    fn block(&self) -> usize {
        self.seq * self.width
    }
}

pub fn position_scores_raw(q: &[f64], k: &[f64], dims: StreamDims, alpha: &[f64], out: &mut [f64]) {
    let StreamDims { batch, heads, cursors, seq, width } = dims;
    let norm = dims.norm();
    let blk = dims.block();
    out.fill(0.0);
    for b in 0..batch {
        for h in 0..heads {
            let o = &mut out[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            for c in 0..cursors {
                let beta = alpha[h * cursors + c].abs() / norm;
                if beta == 0.0 {
                    continue;
                }
                let base = ((b * heads + h) * cursors + c) * blk;
                let mut m = vec![0.0; seq * seq];
                gemm(seq, width, seq, &q[base..base + blk], false, &k[base..base + blk], true, 0.0, &mut m);
                for (ov, mv) in o.iter_mut().zip(&m) {
                    *ov += beta * mv;
                }
            }
        }
    }
}

/// Vector-Jacobian product of [`position_scores_raw`]; accumulates.
#[allow(clippy::too_many_arguments)]
pub fn position_scores_vjp(
    q: &[f64],
    k: &[f64],
    dims: StreamDims,
    alpha: &[f64],
    dout: &[f64],
    mut dq: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
    mut dalpha: Option<&mut [f64]>,
) {
    let StreamDims { batch, heads, cursors, seq, width } = dims;
    let norm = dims.norm();
    let blk = dims.block();
    for b in 0..batch {
        for h in 0..heads {
            let g = &dout[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            for c in 0..cursors {
                let a = alpha[h * cursors + c];
                let beta = a.abs() / norm;
                let base = ((b * heads + h) * cursors + c) * blk;
                let (qb, kb) = (&q[base..base + blk], &k[base..base + blk]);
                if let Some(dq) = dq.as_deref_mut() {
                    // dq = beta * G K
                    let mut tmp = vec![0.0; blk];
                    gemm(seq, seq, width, g, false, kb, false, 0.0, &mut tmp);
                    for (d, t) in dq[base..base + blk].iter_mut().zip(&tmp) {
                        *d += beta * t;
                    }
                }
                if let Some(dk) = dk.as_deref_mut() {
                    // dk = beta * G^T Q
                    let mut tmp = vec![0.0; blk];
                    gemm(seq, seq, width, g, true, qb, false, 0.0, &mut tmp);
                    for (d, t) in dk[base..base + blk].iter_mut().zip(&tmp) {
                        *d += beta * t;
                    }
                }
                if let Some(da) = dalpha.as_deref_mut() {
                    let mut m = vec![0.0; seq * seq];
                    gemm(seq, width, seq, qb, false, kb, true, 0.0, &mut m);
                    let s: f64 = m.iter().zip(g).map(|(x, y)| x * y).sum();
                    da[h * cursors + c] += a.signum() * (a != 0.0) as u8 as f64 * s / norm;
                }
            }
        }
    }
}

/// `out = mu[h] * content + (1 - mu[h]) * position` over blocks of
/// `block` entries per head.
pub fn hybrid_raw(content: &[f64], position: &[f64], mu: &[f64], block: usize, out: &mut [f64]) {
    let heads = mu.len();
    for (i, ((o, c), p)) in out.chunks_mut(block).zip(content.chunks(block)).zip(position.chunks(block)).enumerate() {
        let m = mu[i % heads];
        let n = 1.0 - m;
        for ((ov, cv), pv) in o.iter_mut().zip(c).zip(p) {
            *ov = m * cv + n * pv;
        }
    }
}
