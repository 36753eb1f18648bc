//! Fused differentiable ops for the position path.

use std::rc::Rc;

use super::graph::Var;
use super::ops::sigmoid;
use super::tensor::{gemm, Tensor};
use crate::histfilter::{propagate, propagate_vjp, sharpen_into, sharpen_vjp, StepGateGrads, StepGates};

/// Static description of a histogram scan.
#[derive(Clone, Debug)]
pub struct ScanSpec {
    pub support: usize,
    pub epsilon: f64,
    /// Histograms whose gates are pinned to certain increment without reset.
    pub frozen: Vec<bool>,
    /// For each histogram, the row of the copy input it reads, if any.
    pub copy_rows: Vec<Option<usize>>,
}

impl ScanSpec {
    pub fn plain(histograms: usize, support: usize, epsilon: f64) -> Self {
        Self { support, epsilon, frozen: vec![false; histograms], copy_rows: vec![None; histograms] }
    }
}

const FROZEN: StepGates<'static> = StepGates { reset: 0.0, incr: 1.0, decr: 0.0, keep: 0.0, copy: None };

/// Runs the histogram filter over every timestep, starting each sequence at
/// a one-hot on index 0 and updating it once per token.
///
/// * `reset`: `[N, B, S]` reset probabilities
/// * `actions`: `[N, B, S, 3]` (increment, decrement, keep) probabilities
/// * `gamma_raw`: `[N]`, sharpening exponent `exp(raw) + 1`
/// * `copy`: `[M, B, S, P + 1]` copy distributions for the rows named in
///   `spec.copy_rows`
///
/// Returns the post-sharpen histograms `[N, B, S, P]`.
pub fn histogram_scan<'g>(
    reset: Var<'g>,
    actions: Var<'g>,
    gamma_raw: Var<'g>,
    copy: Option<Var<'g>>,
    spec: &ScanSpec,
) -> Var<'g> {
    let graph = reset.graph();
    let (rv, av, gv) = (reset.value(), actions.value(), gamma_raw.value());
    let cv = copy.map(|c| c.value());
    assert_eq!(rv.rank(), 3, "reset must be [N, B, S]");
    let (n_h, batch, seq) = (rv.shape[0], rv.shape[1], rv.shape[2]);
    assert_eq!(av.shape, vec![n_h, batch, seq, 3], "actions shape");
    assert_eq!(gv.numel(), n_h, "one gamma per histogram");
    assert_eq!(spec.frozen.len(), n_h);
    assert_eq!(spec.copy_rows.len(), n_h);
    let p = spec.support;
    if let Some(c) = &cv {
        assert_eq!(&c.shape[1..], &[batch, seq, p + 1], "copy shape");
    }
    let eps = spec.epsilon;

    let mut pre = vec![0.0; n_h * batch * seq * p];
    let mut out = vec![0.0; n_h * batch * seq * p];
    let mut h = vec![0.0; p];
    for n in 0..n_h {
        let gamma = gv.data[n].exp() + 1.0;
        for b in 0..batch {
            h.fill(0.0);
            h[0] = 1.0;
            for t in 0..seq {
                let gi = (n * batch + b) * seq + t;
                let g = step_gates(&rv, &av, cv.as_deref(), spec, n, b, t, gi);
                let pre_t = &mut pre[gi * p..(gi + 1) * p];
                propagate(&h, &g, pre_t);
                let post_t = &mut out[gi * p..(gi + 1) * p];
                sharpen_into(pre_t, gamma, eps, post_t);
                h.copy_from_slice(post_t);
            }
        }
    }

    let out = Rc::new(Tensor::new(&[n_h, batch, seq, p], out));
    let post = out.clone();
    let spec = spec.clone();
    let (ir, ia, ig) = (reset.id(), actions.id(), gamma_raw.id());
    let ic = copy.map(|c| c.id());
    let mut inputs = vec![reset, actions, gamma_raw];
    inputs.extend(copy);
    graph.record_shared(
        out,
        &inputs,
        Box::new(move |dout, sink| {
            let mut dreset = vec![0.0; rv.numel()];
            let mut dact = vec![0.0; av.numel()];
            let mut dgamma = vec![0.0; n_h];
            let mut dcopy = cv.as_ref().map(|c| vec![0.0; c.numel()]);
            let mut delta0 = vec![0.0; p];
            delta0[0] = 1.0;
            let mut dh_next = vec![0.0; p];
            let mut dy = vec![0.0; p];
            let mut dx = vec![0.0; p];
            let mut dh_prev = vec![0.0; p];
            for n in 0..n_h {
                let gamma = gv.data[n].exp() + 1.0;
                for b in 0..batch {
                    dh_next.fill(0.0);
                    for t in (0..seq).rev() {
                        let gi = (n * batch + b) * seq + t;
                        let g = step_gates(&rv, &av, cv.as_deref(), &spec, n, b, t, gi);
                        for ((y, o), nx) in dy.iter_mut().zip(&dout[gi * p..(gi + 1) * p]).zip(&dh_next) {
                            *y = o + nx;
                        }
                        dx.fill(0.0);
                        dgamma[n] += sharpen_vjp(
                            &pre[gi * p..(gi + 1) * p],
                            &post.data[gi * p..(gi + 1) * p],
                            &dy,
                            gamma,
                            eps,
                            &mut dx,
                        );
                        let h_prev = if t == 0 { &delta0[..] } else { &post.data[(gi - 1) * p..gi * p] };
                        dh_prev.fill(0.0);
                        let mut gg = StepGateGrads::default();
                        let dc = match (spec.copy_rows[n], dcopy.as_mut()) {
                            (Some(m), Some(dc)) => {
                                let off = ((m * batch + b) * seq + t) * (p + 1);
                                Some(&mut dc[off..off + p + 1])
                            }
                            _ => None,
                        };
                        propagate_vjp(h_prev, &g, &dx, &mut dh_prev, &mut gg, dc);
                        if !spec.frozen[n] {
                            dreset[gi] += gg.reset;
                            dact[gi * 3] += gg.incr;
                            dact[gi * 3 + 1] += gg.decr;
                            dact[gi * 3 + 2] += gg.keep;
                        }
                        std::mem::swap(&mut dh_next, &mut dh_prev);
                    }
                }
                dgamma[n] *= gamma - 1.0;
            }
            sink.add(ir, &dreset);
            sink.add(ia, &dact);
            sink.add(ig, &dgamma);
            if let (Some(ic), Some(dc)) = (ic, dcopy) {
                sink.add(ic, &dc);
            }
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn step_gates<'a>(
    reset: &Tensor,
    actions: &Tensor,
    copy: Option<&'a Tensor>,
    spec: &ScanSpec,
    n: usize,
    b: usize,
    t: usize,
    gi: usize,
) -> StepGates<'a> {
    let copy_slice = match (spec.copy_rows[n], copy) {
        (Some(m), Some(c)) => {
            let (batch, seq, w) = (c.shape[1], c.shape[2], c.shape[3]);
            let off = ((m * batch + b) * seq + t) * w;
            Some(&c.data[off..off + w])
        }
        _ => None,
    };
    if spec.frozen[n] {
        return StepGates { copy: copy_slice, ..FROZEN };
    }
    StepGates {
        reset: reset.data[gi],
        incr: actions.data[gi * 3],
        decr: actions.data[gi * 3 + 1],
        keep: actions.data[gi * 3 + 2],
        copy: copy_slice,
    }
}

/// Position index a copy from token `j` lands on: the location of an
/// increment-only cursor after reading token `j`.
pub fn copy_target(j: usize, support: usize) -> usize {
    (j + 1).min(support - 1)
}

/// Causal copy distributions.
///
/// `logits` is `[M, B, S, S]` (query time, key time) and `no_copy` is
/// `[M, B, S]`. At time `t` the softmax runs over keys `0..=t` and the
/// no-copy slot; key `j` deposits on [`copy_target`]. Output is
/// `[M, B, S, P + 1]` with the no-copy probability last.
pub fn copy_distribution<'g>(logits: Var<'g>, no_copy: Var<'g>, support: usize) -> Var<'g> {
    let (lv, nv) = (logits.value(), no_copy.value());
    assert_eq!(lv.rank(), 4);
    let (m, batch, seq) = (lv.shape[0], lv.shape[1], lv.shape[2]);
    assert_eq!(lv.shape[3], seq);
    assert_eq!(nv.shape, vec![m, batch, seq]);
    let p = support;
    let rows = m * batch * seq;
    let w = seq + 1;
    // Softmax weights per row: keys 0..=t then the no-copy slot at index S.
    let mut attn = vec![0.0; rows * w];
    let mut out = vec![0.0; rows * (p + 1)];
    for r in 0..rows {
        let t = r % seq;
        let a = &mut attn[r * w..(r + 1) * w];
        a[..=t].copy_from_slice(&lv.data[r * seq..r * seq + t + 1]);
        a[seq] = nv.data[r];
        let max = a[..=t].iter().fold(a[seq], |mx, &v| mx.max(v));
        let mut z = 0.0;
        for j in (0..=t).chain(std::iter::once(seq)) {
            a[j] = (a[j] - max).exp();
            z += a[j];
        }
        for j in (0..=t).chain(std::iter::once(seq)) {
            a[j] /= z;
        }
        let o = &mut out[r * (p + 1)..(r + 1) * (p + 1)];
        for j in 0..=t {
            o[copy_target(j, p)] += a[j];
        }
        o[p] = a[seq];
    }
    let (il, inc) = (logits.id(), no_copy.id());
    logits.graph().record(
        Tensor::new(&[m, batch, seq, p + 1], out),
        &[logits, no_copy],
        Box::new(move |dout, sink| {
            let mut dl = vec![0.0; rows * seq];
            let mut dn = vec![0.0; rows];
            for r in 0..rows {
                let t = r % seq;
                let a = &attn[r * w..(r + 1) * w];
                let g = &dout[r * (p + 1)..(r + 1) * (p + 1)];
                let gnc = g[p];
                let dot: f64 = (0..=t).map(|j| a[j] * g[copy_target(j, p)]).sum::<f64>() + a[seq] * gnc;
                for j in 0..=t {
                    dl[r * seq + j] = a[j] * (g[copy_target(j, p)] - dot);
                }
                dn[r] = a[seq] * (gnc - dot);
            }
            sink.add(il, &dl);
            sink.add(inc, &dn);
        }),
    )
}

/// Rescales every contiguous block of `block` entries to Euclidean norm
/// `target`. All-zero blocks stay zero.
pub fn block_normalize(x: Var<'_>, block: usize, target: f64) -> Var<'_> {
    let xv = x.value();
    assert_eq!(xv.numel() % block, 0, "block does not divide tensor");
    let mut out = xv.data.clone();
    let mut inv_norms = vec![0.0; xv.numel() / block];
    for (i, chunk) in out.chunks_mut(block).enumerate() {
        let norm = chunk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            inv_norms[i] = 1.0 / norm;
            let s = target / norm;
            chunk.iter_mut().for_each(|v| *v *= s);
        }
    }
    let y = Rc::new(Tensor::new(&xv.shape, out));
    let yc = y.clone();
    let ix = x.id();
    x.graph().record_shared(
        y,
        &[x],
        Box::new(move |g, sink| {
            if let Some(dx) = sink.slot(ix) {
                for (i, ((d, gb), yb)) in dx.chunks_mut(block).zip(g.chunks(block)).zip(yc.data.chunks(block)).enumerate() {
                    let inv = inv_norms[i];
                    if inv == 0.0 {
                        continue;
                    }
                    // y = target * u, u = x / |x|; dx = target/|x| (g - u <u, g>)
                    let dot: f64 = gb.iter().zip(yb).map(|(a, b)| a * b).sum::<f64>() / target;
                    for ((dv, gv), yv) in d.iter_mut().zip(gb).zip(yb) {
                        *dv += target * inv * (gv - yv / target * dot);
                    }
                }
            }
        }),
    )
}

/// Cursor-weighted position scores.
///
/// `stream` is `[2, B, H, S, C * d]` (queries then keys) and `alpha` is
/// `[H, C]`. Returns `[B, H, S, S]` with entry
/// `sum_c |alpha[h, c]| <q[s, c], k[s', c]> / sqrt(C * d)`.
pub fn position_scores<'g>(stream: Var<'g>, alpha: Var<'g>, cursors: usize) -> Var<'g> {
    let (sv, av) = (stream.value(), alpha.value());
    assert_eq!(sv.rank(), 5, "stream must be [2, B, H, S, C*d]");
    assert_eq!(sv.shape[0], 2);
    let (batch, heads, seq, cd) = (sv.shape[1], sv.shape[2], sv.shape[3], sv.shape[4]);
    assert_eq!(cd % cursors, 0);
    let d = cd / cursors;
    assert_eq!(av.shape, vec![heads, cursors], "alpha shape");
    let norm = (cd as f64).sqrt();
    let half = sv.numel() / 2;
    let blk = seq * cd;
    let mut out = vec![0.0; batch * heads * seq * seq];
    let mut qs = vec![0.0; blk];
    for b in 0..batch {
        for h in 0..heads {
            let bh = b * heads + h;
            scale_cursors(&sv.data[bh * blk..(bh + 1) * blk], &av.data[h * cursors..(h + 1) * cursors], d, norm, &mut qs);
            let k = &sv.data[half + bh * blk..half + (bh + 1) * blk];
            gemm(seq, cd, seq, &qs, false, k, true, 0.0, &mut out[bh * seq * seq..(bh + 1) * seq * seq]);
        }
    }
    let (is, ia) = (stream.id(), alpha.id());
    stream.graph().record(
        Tensor::new(&[batch, heads, seq, seq], out),
        &[stream, alpha],
        Box::new(move |g, sink| {
            let want_s = sink.wants(is);
            let want_a = sink.wants(ia);
            let mut ds = want_s.then(|| vec![0.0; sv.numel()]);
            let mut da = vec![0.0; heads * cursors];
            let mut qs = vec![0.0; blk];
            let mut gk = vec![0.0; blk];
            for b in 0..batch {
                for h in 0..heads {
                    let bh = b * heads + h;
                    let gb = &g[bh * seq * seq..(bh + 1) * seq * seq];
                    let q = &sv.data[bh * blk..(bh + 1) * blk];
                    let k = &sv.data[half + bh * blk..half + (bh + 1) * blk];
                    let al = &av.data[h * cursors..(h + 1) * cursors];
                    // gk = G K: gradient w.r.t. the scaled queries.
                    gemm(seq, seq, cd, gb, false, k, false, 0.0, &mut gk);
                    if let Some(ds) = ds.as_mut() {
                        let mut dq = vec![0.0; blk];
                        scale_cursors(&gk, al, d, norm, &mut dq);
                        for (o, v) in ds[bh * blk..(bh + 1) * blk].iter_mut().zip(&dq) {
                            *o += v;
                        }
                        scale_cursors(q, al, d, norm, &mut qs);
                        gemm(seq, seq, cd, gb, true, &qs, false, 1.0, &mut ds[half + bh * blk..half + (bh + 1) * blk]);
                    }
                    if want_a {
                        for c in 0..cursors {
                            let mut s = 0.0;
                            for t in 0..seq {
                                let off = t * cd + c * d;
                                s += gk[off..off + d].iter().zip(&q[off..off + d]).map(|(x, y)| x * y).sum::<f64>();
                            }
                            let a = al[c];
                            let sign = if a > 0.0 {
                                1.0
                            } else if a < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            da[h * cursors + c] += sign * s / norm;
                        }
                    }
                }
            }
            if let Some(ds) = ds {
                sink.add(is, &ds);
            }
            sink.add(ia, &da);
        }),
    )
}

fn scale_cursors(x: &[f64], alpha: &[f64], d: usize, norm: f64, out: &mut [f64]) {
    let cd = alpha.len() * d;
    for (orow, xrow) in out.chunks_mut(cd).zip(x.chunks(cd)) {
        for (c, a) in alpha.iter().enumerate() {
            let beta = a.abs() / norm;
            for (o, v) in orow[c * d..(c + 1) * d].iter_mut().zip(&xrow[c * d..(c + 1) * d]) {
                *o = beta * v;
            }
        }
    }
}

/// Per-head `mu * content + (1 - mu) * position` with `mu = sigmoid(logit)`.
/// Both score inputs are `[B, H, S, S]`.
pub fn hybrid<'g>(content: Var<'g>, position: Var<'g>, mu_logit: Var<'g>) -> Var<'g> {
    let (cv, pv, mv) = (content.value(), position.value(), mu_logit.value());
    assert_eq!(cv.shape, pv.shape, "hybrid score shapes");
    let heads = mv.numel();
    assert_eq!(cv.shape[1], heads);
    let block = cv.shape[2] * cv.shape[3];
    let mu: Vec<f64> = mv.data.iter().map(|&l| sigmoid(l)).collect();
    let mut out = vec![0.0; cv.numel()];
    crate::attn_scores::hybrid_raw(&cv.data, &pv.data, &mu, block, &mut out);
    let (ic, ip, im) = (content.id(), position.id(), mu_logit.id());
    content.graph().record(
        Tensor::new(&cv.shape, out),
        &[content, position, mu_logit],
        Box::new(move |g, sink| {
            let mut dc = vec![0.0; g.len()];
            let mut dp = vec![0.0; g.len()];
            let mut dm = vec![0.0; heads];
            for (i, gb) in g.chunks(block).enumerate() {
                let h = i % heads;
                let m = mu[h];
                let mut s = 0.0;
                for (j, gv) in gb.iter().enumerate() {
                    let k = i * block + j;
                    dc[k] = m * gv;
                    dp[k] = (1.0 - m) * gv;
                    s += gv * (cv.data[k] - pv.data[k]);
                }
                dm[h] += s * m * (1.0 - m);
            }
            sink.add(ic, &dc);
            sink.add(ip, &dp);
            sink.add(im, &dm);
        }),
    )
}

/// `lambda * |W^T W - I|_F^2` for a square `W`.
pub fn orthogonality_penalty(w: Var<'_>, lambda: f64) -> Var<'_> {
    let wv = w.value();
    assert_eq!(wv.rank(), 2);
    let n = wv.shape[0];
    assert_eq!(wv.shape[1], n, "orthogonality penalty needs a square matrix");
    let mut gram = vec![0.0; n * n];
    gemm(n, n, n, &wv.data, true, &wv.data, false, 0.0, &mut gram);
    for i in 0..n {
        gram[i * n + i] -= 1.0;
    }
    let value = lambda * gram.iter().map(|v| v * v).sum::<f64>();
    let iw = w.id();
    w.graph().record(
        Tensor::scalar(value),
        &[w],
        Box::new(move |g, sink| {
            if let Some(dw) = sink.slot(iw) {
                // d/dW = 4 lambda W (W^T W - I)
                let mut tmp = vec![0.0; n * n];
                gemm(n, n, n, &wv.data, false, &gram, false, 0.0, &mut tmp);
                let s = 4.0 * lambda * g[0];
                for (d, v) in dw.iter_mut().zip(&tmp) {
                    *d += s * v;
                }
            }
        }),
    )
}
