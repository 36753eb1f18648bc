//! Differentiable tensor ops on [`Var`].

use std::rc::Rc;

use super::graph::{GradSink, Var};
use super::tensor::{gemm, strides, Tensor};

impl<'g> Var<'g> {
    fn unary(self, data: Vec<f64>, backward: impl Fn(&[f64], &mut [f64]) + 'static) -> Var<'g> {
        let shape = self.shape();
        let id = self.id;
        self.graph.record(
            Tensor::new(&shape, data),
            &[self],
            Box::new(move |g: &[f64], sink: &mut GradSink| {
                if let Some(dx) = sink.slot(id) {
                    backward(g, dx);
                }
            }),
        )
    }

    pub fn add(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape, b.shape, "add shape mismatch");
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
        let (ia, ib) = (self.id, other.id);
        self.graph.record(
            Tensor::new(&a.shape, data),
            &[self, other],
            Box::new(move |g, sink| {
                sink.add(ia, g);
                sink.add(ib, g);
            }),
        )
    }

    pub fn sub(self, other: Var<'g>) -> Var<'g> {
        self.add(other.scale(-1.0))
    }

    pub fn mul(self, other: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape, b.shape, "mul shape mismatch");
        let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
        let (ia, ib) = (self.id, other.id);
        let shape = a.shape.clone();
        self.graph.record(
            Tensor::new(&shape, data),
            &[self, other],
            Box::new(move |g, sink| {
                if let Some(da) = sink.slot(ia) {
                    for ((d, gi), bi) in da.iter_mut().zip(g).zip(&b.data) {
                        *d += gi * bi;
                    }
                }
                if let Some(db) = sink.slot(ib) {
                    for ((d, gi), ai) in db.iter_mut().zip(g).zip(&a.data) {
                        *d += gi * ai;
                    }
                }
            }),
        )
    }

    /// Adds a `[n]` vector to every row of a `[..., n]` tensor.
    pub fn add_row(self, bias: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), bias.value());
        let n = a.last_dim();
        assert_eq!(b.numel(), n, "add_row: bias of {} for last dim {n}", b.numel());
        let data = a.data.chunks(n).flat_map(|row| row.iter().zip(&b.data).map(|(x, y)| x + y)).collect();
        let (ia, ib) = (self.id, bias.id);
        self.graph.record(
            Tensor::new(&a.shape, data),
            &[self, bias],
            Box::new(move |g, sink| {
                sink.add(ia, g);
                if let Some(db) = sink.slot(ib) {
                    for row in g.chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }),
        )
    }

    /// `a * x + b` elementwise with constant `a`, `b`.
    pub fn affine(self, a: f64, b: f64) -> Var<'g> {
        let data = self.value().data.iter().map(|x| a * x + b).collect();
        self.unary(data, move |g, dx| {
            for (d, gi) in dx.iter_mut().zip(g) {
                *d += a * gi;
            }
        })
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.affine(c, 0.0)
    }

    pub fn one_minus(self) -> Var<'g> {
        self.affine(-1.0, 1.0)
    }

    pub fn exp(self) -> Var<'g> {
        let y: Vec<f64> = self.value().data.iter().map(|x| x.exp()).collect();
        let yc = y.clone();
        self.unary(y, move |g, dx| {
            for ((d, gi), yi) in dx.iter_mut().zip(g).zip(&yc) {
                *d += gi * yi;
            }
        })
    }

    pub fn sigmoid(self) -> Var<'g> {
        let y: Vec<f64> = self.value().data.iter().map(|&x| sigmoid(x)).collect();
        let yc = y.clone();
        self.unary(y, move |g, dx| {
            for ((d, gi), yi) in dx.iter_mut().zip(g).zip(&yc) {
                *d += gi * yi * (1.0 - yi);
            }
        })
    }

    pub fn tanh(self) -> Var<'g> {
        let y: Vec<f64> = self.value().data.iter().map(|x| x.tanh()).collect();
        let yc = y.clone();
        self.unary(y, move |g, dx| {
            for ((d, gi), yi) in dx.iter_mut().zip(g).zip(&yc) {
                *d += gi * (1.0 - yi * yi);
            }
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'g> {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
        let x = self.value();
        let y = x
            .data
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (C * (v + 0.044715 * v * v * v)).tanh()))
            .collect();
        self.unary(y, move |g, dx| {
            for ((d, gi), &v) in dx.iter_mut().zip(g).zip(&x.data) {
                let u = C * (v + 0.044715 * v * v * v);
                let t = u.tanh();
                let du = C * (1.0 + 3.0 * 0.044715 * v * v);
                *d += gi * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
            }
        })
    }

    pub fn sum_all(self) -> Var<'g> {
        let x = self.value();
        let n = x.numel();
        let id = self.id;
        self.graph.record(
            Tensor::scalar(x.data.iter().sum()),
            &[self],
            Box::new(move |g, sink| {
                if let Some(dx) = sink.slot(id) {
                    for d in dx.iter_mut().take(n) {
                        *d += g[0];
                    }
                }
            }),
        )
    }

    pub fn mean_all(self) -> Var<'g> {
        let n = self.numel() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// `[..., k] x [k, n] -> [..., n]`.
    pub fn matmul(self, w: Var<'g>) -> Var<'g> {
        self.matmul_impl(w, false)
    }

    /// `[..., k] x [n, k]^T -> [..., n]`.
    pub fn matmul_t(self, w: Var<'g>) -> Var<'g> {
        self.matmul_impl(w, true)
    }

    fn matmul_impl(self, w: Var<'g>, w_t: bool) -> Var<'g> {
        let (a, b) = (self.value(), w.value());
        assert_eq!(b.rank(), 2, "matmul weight must be rank 2");
        let k = a.last_dim();
        let (bk, n) = if w_t { (b.shape[1], b.shape[0]) } else { (b.shape[0], b.shape[1]) };
        assert_eq!(k, bk, "matmul inner dims {:?} x {:?}", a.shape, b.shape);
        let m = a.rows();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &a.data, false, &b.data, w_t, 0.0, &mut out);
        let mut shape = a.shape.clone();
        *shape.last_mut().unwrap() = n;
        let (ia, ib) = (self.id, w.id);
        self.graph.record(
            Tensor::new(&shape, out),
            &[self, w],
            Box::new(move |g, sink| {
                if let Some(da) = sink.slot(ia) {
                    // da[m,k] += g[m,n] * B^T
                    gemm(m, n, k, g, false, &b.data, !w_t, 1.0, da);
                }
                if let Some(db) = sink.slot(ib) {
                    if w_t {
                        // db[n,k] += g^T[n,m] * a[m,k]
                        gemm(n, m, k, g, true, &a.data, false, 1.0, db);
                    } else {
                        // db[k,n] += a^T[k,m] * g[m,n]
                        gemm(k, m, n, &a.data, true, g, false, 1.0, db);
                    }
                }
            }),
        )
    }

    /// Matmul against a constant matrix; no gradient flows to `table`.
    pub fn matmul_const(self, table: Rc<Tensor>) -> Var<'g> {
        let a = self.value();
        let (k, n) = (table.shape[0], table.shape[1]);
        assert_eq!(a.last_dim(), k, "matmul_const inner dims");
        let m = a.rows();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &a.data, false, &table.data, false, 0.0, &mut out);
        let mut shape = a.shape.clone();
        *shape.last_mut().unwrap() = n;
        let ia = self.id;
        self.graph.record(
            Tensor::new(&shape, out),
            &[self],
            Box::new(move |g, sink| {
                if let Some(da) = sink.slot(ia) {
                    gemm(m, n, k, g, false, &table.data, true, 1.0, da);
                }
            }),
        )
    }

    /// Batched matmul `[b, m, k] x [b, k, n]`, or `[b, n, k]^T` when `trans_b`.
    pub fn bmm(self, other: Var<'g>, trans_b: bool) -> Var<'g> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.rank(), 3);
        assert_eq!(b.rank(), 3);
        let (batch, m, k) = (a.shape[0], a.shape[1], a.shape[2]);
        let n = if trans_b { b.shape[1] } else { b.shape[2] };
        assert_eq!(b.shape[0], batch);
        assert_eq!(if trans_b { b.shape[2] } else { b.shape[1] }, k, "bmm inner dims");
        let mut out = vec![0.0; batch * m * n];
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &a.data[i * m * k..(i + 1) * m * k],
                false,
                &b.data[i * k * n..(i + 1) * k * n],
                trans_b,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let (ia, ib) = (self.id, other.id);
        self.graph.record(
            Tensor::new(&[batch, m, n], out),
            &[self, other],
            Box::new(move |g, sink| {
                if let Some(da) = sink.slot(ia) {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &b.data[i * k * n..(i + 1) * k * n];
                        // da = g * B^T where B is logical k x n
                        gemm(m, n, k, gi, false, bi, !trans_b, 1.0, &mut da[i * m * k..(i + 1) * m * k]);
                    }
                }
                if let Some(db) = sink.slot(ib) {
                    for i in 0..batch {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &a.data[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if trans_b {
                            // stored [n, k]: db += g^T a
                            gemm(n, m, k, gi, true, ai, false, 1.0, dbi);
                        } else {
                            gemm(k, m, n, ai, true, gi, false, 1.0, dbi);
                        }
                    }
                }
            }),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g> {
        let x = self.value();
        assert_eq!(shape.iter().product::<usize>(), x.numel(), "reshape {:?} -> {shape:?}", x.shape);
        let id = self.id;
        self.graph.record(
            Tensor::new(shape, x.data.clone()),
            &[self],
            Box::new(move |g, sink| sink.add(id, g)),
        )
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Var<'g> {
        let x = self.value();
        assert_eq!(axes.len(), x.rank());
        let out_shape: Vec<usize> = axes.iter().map(|&a| x.shape[a]).collect();
        let in_strides = strides(&x.shape);
        // Stride of each output axis inside the input buffer.
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let map = permutation_map(&out_shape, &src_strides);
        let data = map.iter().map(|&s| x.data[s]).collect();
        let id = self.id;
        self.graph.record(
            Tensor::new(&out_shape, data),
            &[self],
            Box::new(move |g, sink| {
                if let Some(dx) = sink.slot(id) {
                    for (gi, &s) in g.iter().zip(map.iter()) {
                        dx[s] += gi;
                    }
                }
            }),
        )
    }

    /// Slice `[start, start + len)` of the last axis.
    pub fn narrow_last(self, start: usize, len: usize) -> Var<'g> {
        let x = self.value();
        let n = x.last_dim();
        assert!(start + len <= n, "narrow_last out of range");
        let data = x.data.chunks(n).flat_map(|r| r[start..start + len].iter().copied()).collect();
        let mut shape = x.shape.clone();
        *shape.last_mut().unwrap() = len;
        let id = self.id;
        self.graph.record(
            Tensor::new(&shape, data),
            &[self],
            Box::new(move |g, sink| {
                if let Some(dx) = sink.slot(id) {
                    for (drow, grow) in dx.chunks_mut(n).zip(g.chunks(len)) {
                        for (d, v) in drow[start..start + len].iter_mut().zip(grow) {
                            *d += v;
                        }
                    }
                }
            }),
        )
    }

    /// `[b, s, n] -> [b, n]` at time `t`.
    pub fn select_time(self, t: usize) -> Var<'g> {
        let x = self.value();
        assert_eq!(x.rank(), 3);
        let (b, s, n) = (x.shape[0], x.shape[1], x.shape[2]);
        let mut data = Vec::with_capacity(b * n);
        for bi in 0..b {
            data.extend_from_slice(&x.data[(bi * s + t) * n..(bi * s + t + 1) * n]);
        }
        let id = self.id;
        self.graph.record(
            Tensor::new(&[b, n], data),
            &[self],
            Box::new(move |g, sink| {
                if let Some(dx) = sink.slot(id) {
                    for bi in 0..b {
                        for (d, v) in dx[(bi * s + t) * n..(bi * s + t + 1) * n].iter_mut().zip(&g[bi * n..(bi + 1) * n]) {
                            *d += v;
                        }
                    }
                }
            }),
        )
    }

    /// Row gather from a `[vocab, d]` table.
    pub fn embedding(self, ids: &[usize]) -> Var<'g> {
        let table = self.value();
        assert_eq!(table.rank(), 2);
        let (v, d) = (table.shape[0], table.shape[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            assert!(i < v, "embedding id {i} out of range {v}");
            data.extend_from_slice(&table.data[i * d..(i + 1) * d]);
        }
        let ids = ids.to_vec();
        let id = self.id;
        self.graph.record(
            Tensor::new(&[ids.len(), d], data),
            &[self],
            Box::new(move |g, sink| {
                if let Some(dt) = sink.slot(id) {
                    for (r, &i) in ids.iter().enumerate() {
                        for (dv, gv) in dt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *dv += gv;
                        }
                    }
                }
            }),
        )
    }

    pub fn softmax_last(self) -> Var<'g> {
        let x = self.value();
        let n = x.last_dim();
        let mut y = x.data.clone();
        for row in y.chunks_mut(n) {
            softmax_in_place(row);
        }
        let yc = y.clone();
        self.unary(y, move |g, dx| {
            for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(yc.chunks(n)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                for ((d, gi), yi) in drow.iter_mut().zip(grow).zip(yrow) {
                    *d += yi * (gi - dot);
                }
            }
        })
    }

    /// Softmax over the last axis of `[..., s, s]` with keys after the query
    /// masked out.
    pub fn causal_softmax(self) -> Var<'g> {
        let x = self.value();
        let r = x.rank();
        assert!(r >= 2 && x.shape[r - 1] == x.shape[r - 2], "causal_softmax needs [..., s, s]");
        let s = x.shape[r - 1];
        let mut y = x.data.clone();
        for (ri, row) in y.chunks_mut(s).enumerate() {
            let q = ri % s;
            softmax_in_place(&mut row[..=q]);
            row[q + 1..].fill(0.0);
        }
        let yc = y.clone();
        self.unary(y, move |g, dx| {
            for (ri, ((drow, grow), yrow)) in dx.chunks_mut(s).zip(g.chunks(s)).zip(yc.chunks(s)).enumerate() {
                let q = ri % s;
                let dot: f64 = grow[..=q].iter().zip(&yrow[..=q]).map(|(a, b)| a * b).sum();
                for j in 0..=q {
                    drow[j] += yrow[j] * (grow[j] - dot);
                }
            }
        })
    }

    /// Layer norm over the last axis with gain and bias.
    pub fn layer_norm(self, gain: Var<'g>, bias: Var<'g>) -> Var<'g> {
        const EPS: f64 = 1e-5;
        let x = self.value();
        let (gv, bv) = (gain.value(), bias.value());
        let n = x.last_dim();
        let rows = x.rows();
        let mut xhat = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.numel()];
        for r in 0..rows {
            let row = &x.data[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv.data[j] + bv.data[j];
            }
        }
        let (ix, ig, ib) = (self.id, gain.id, bias.id);
        self.graph.record(
            Tensor::new(&x.shape, out),
            &[self, gain, bias],
            Box::new(move |g, sink| {
                if let Some(dg) = sink.slot(ig) {
                    for r in 0..rows {
                        for j in 0..n {
                            dg[j] += g[r * n + j] * xhat[r * n + j];
                        }
                    }
                }
                if let Some(db) = sink.slot(ib) {
                    for r in 0..rows {
                        for j in 0..n {
                            db[j] += g[r * n + j];
                        }
                    }
                }
                if let Some(dx) = sink.slot(ix) {
                    for r in 0..rows {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..n {
                            let dh = g[r * n + j] * gv.data[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[r * n + j];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        for j in 0..n {
                            let dh = g[r * n + j] * gv.data[j];
                            dx[r * n + j] += inv_std[r] * (dh - mean_dh - xhat[r * n + j] * mean_dh_h);
                        }
                    }
                }
            }),
        )
    }

    /// Mean token cross-entropy over rows with `mask[row] == true`.
    ///
    /// `self` is `[rows, vocab]` logits. Returns 0 when the mask is empty.
    pub fn masked_cross_entropy(self, targets: &[usize], mask: &[bool]) -> Var<'g> {
        let x = self.value();
        let v = x.last_dim();
        let rows = x.rows();
        assert_eq!(targets.len(), rows);
        assert_eq!(mask.len(), rows);
        let count = mask.iter().filter(|m| **m).count();
        let mut probs = vec![0.0; x.numel()];
        let mut loss = 0.0;
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            let row = &x.data[r * v..(r + 1) * v];
            let p = &mut probs[r * v..(r + 1) * v];
            p.copy_from_slice(row);
            softmax_in_place(p);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a));
            let lse = max + row.iter().map(|a| (a - max).exp()).sum::<f64>().ln();
            loss += lse - row[targets[r]];
        }
        let denom = count.max(1) as f64;
        let targets = targets.to_vec();
        let mask = mask.to_vec();
        let id = self.id;
        self.graph.record(
            Tensor::scalar(loss / denom),
            &[self],
            Box::new(move |g, sink| {
                if let Some(dx) = sink.slot(id) {
                    let scale = g[0] / denom;
                    for r in 0..rows {
                        if !mask[r] {
                            continue;
                        }
                        for j in 0..v {
                            dx[r * v + j] += scale * probs[r * v + j];
                        }
                        dx[r * v + targets[r]] -= scale;
                    }
                }
            }),
        )
    }
}

/// Stacks `[b, n]` tensors along a new time axis: `[b, s, n]`.
pub fn stack_time<'g>(steps: &[Var<'g>]) -> Var<'g> {
    assert!(!steps.is_empty());
    let graph = steps[0].graph;
    let vals: Vec<Rc<Tensor>> = steps.iter().map(|v| v.value()).collect();
    let (b, n) = (vals[0].shape[0], vals[0].shape[1]);
    let s = steps.len();
    let mut data = vec![0.0; b * s * n];
    for (t, v) in vals.iter().enumerate() {
        assert_eq!(v.shape, vec![b, n]);
        for bi in 0..b {
            data[(bi * s + t) * n..(bi * s + t + 1) * n].copy_from_slice(&v.data[bi * n..(bi + 1) * n]);
        }
    }
    let ids: Vec<usize> = steps.iter().map(|v| v.id).collect();
    graph.record(
        Tensor::new(&[b, s, n], data),
        steps,
        Box::new(move |g, sink| {
            for (t, &id) in ids.iter().enumerate() {
                if let Some(dx) = sink.slot(id) {
                    for bi in 0..b {
                        for (d, v) in dx[bi * n..(bi + 1) * n].iter_mut().zip(&g[(bi * s + t) * n..(bi * s + t + 1) * n]) {
                            *d += v;
                        }
                    }
                }
            }
        }),
    )
}

/// Concatenation along `axis`; all other axes must agree.
pub fn concat<'g>(parts: &[Var<'g>], axis: usize) -> Var<'g> {
    assert!(!parts.is_empty());
    let graph = parts[0].graph;
    let vals: Vec<Rc<Tensor>> = parts.iter().map(|v| v.value()).collect();
    let base = &vals[0].shape;
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let widths: Vec<usize> = vals
        .iter()
        .map(|v| {
            assert_eq!(v.shape[..axis], base[..axis], "concat outer axes differ");
            assert_eq!(v.shape[axis + 1..], base[axis + 1..], "concat inner axes differ");
            v.shape[axis] * inner
        })
        .collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(outer * total);
    for o in 0..outer {
        for (v, &w) in vals.iter().zip(&widths) {
            data.extend_from_slice(&v.data[o * w..(o + 1) * w]);
        }
    }
    let mut shape = base.clone();
    shape[axis] = total / inner;
    let ids: Vec<usize> = parts.iter().map(|v| v.id).collect();
    graph.record(
        Tensor::new(&shape, data),
        parts,
        Box::new(move |g, sink| {
            let mut start = 0;
            for (&id, &w) in ids.iter().zip(&widths) {
                if let Some(dx) = sink.slot(id) {
                    for o in 0..outer {
                        for (d, v) in dx[o * w..(o + 1) * w].iter_mut().zip(&g[o * total + start..o * total + start + w]) {
                            *d += v;
                        }
                    }
                }
                start += w;
            }
        }),
    )
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a));
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

/// For each output flat index, the source flat index in the input.
fn permutation_map(out_shape: &[usize], src_strides: &[usize]) -> Vec<usize> {
    let total: usize = out_shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        // Odometer increment over the output index.
        for ax in (0..out_shape.len()).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    map
}
