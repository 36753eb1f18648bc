//! Sinusoidal position tables and superposed position streams.
//!
//! A cursor's histogram `h` over positions becomes the stream vector
//! `e = sum_k h[k] f(k)` where `f` is the classic sinusoidal encoding. The
//! streams of all cursors of a head are concatenated and normalized before
//! they meet in the attention scores.

use serde::{Deserialize, Serialize};

use crate::error::{PrismError, Result};
use crate::nn::tensor::gemm;

pub const DEFAULT_BASE: f64 = 10_000.0;

/// `P x d_pe` table whose row `k` is the sinusoidal encoding of position `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SinTable {
    entries: Vec<f64>,
    support: usize,
    width: usize,
    base: f64,
}

/// Builds the interleaved sin/cos table: columns `2i` and `2i + 1` hold
/// `sin(k w_i)` and `cos(k w_i)` with `w_i = exp(-ln(base) * 2i / d_pe)`.
pub fn build_sin_table(support: usize, width: usize) -> Result<SinTable> {
    SinTable::with_base(support, width, DEFAULT_BASE)
}

impl SinTable {
    pub fn with_base(support: usize, width: usize, base: f64) -> Result<Self> {
        if width == 0 || !width.is_multiple_of(2) {
            return Err(PrismError::Config(format!("encoding width must be even and positive, got {width}")));
        }
        if support == 0 {
            return Err(PrismError::Config("table support must be at least 1".into()));
        }
        let freqs: Vec<f64> = (0..width / 2).map(|i| frequency(i, width, base)).collect();
        let mut entries = Vec::with_capacity(support * width);
        for k in 0..support {
            for &w in &freqs {
                let angle = k as f64 * w;
                entries.push(angle.sin());
                entries.push(angle.cos());
            }
        }
        Ok(Self { entries, support, width, base })
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.entries[k * self.width..(k + 1) * self.width]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Angular frequency of sin/cos pair `i`.
    pub fn frequency(&self, i: usize) -> f64 {
        frequency(i, self.width, self.base)
    }

    /// Norm of every row: `sqrt(d_pe / 2)`.
    pub fn row_norm(&self) -> f64 {
        (self.width as f64 / 2.0).sqrt()
    }

    pub fn to_tensor(&self) -> crate::nn::Tensor {
        crate::nn::Tensor::new(&[self.support, self.width], self.entries.clone())
    }
}

fn frequency(i: usize, width: usize, base: f64) -> f64 {
    (-(base.ln()) * (2 * i) as f64 / width as f64).exp()
}

/// Histograms laid out as `(cursor, batch, time, position)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBlock {
    pub data: Vec<f64>,
    pub cursors: usize,
    pub batch: usize,
    pub seq: usize,
    pub support: usize,
}

impl HistogramBlock {
    pub fn zeros(cursors: usize, batch: usize, seq: usize, support: usize) -> Self {
        Self { data: vec![0.0; cursors * batch * seq * support], cursors, batch, seq, support }
    }

    pub fn at_mut(&mut self, c: usize, b: usize, t: usize) -> &mut [f64] {
        let off = ((c * self.batch + b) * self.seq + t) * self.support;
        &mut self.data[off..off + self.support]
    }

    pub fn at(&self, c: usize, b: usize, t: usize) -> &[f64] {
        let off = ((c * self.batch + b) * self.seq + t) * self.support;
        &self.data[off..off + self.support]
    }
}

/// Position streams laid out as `(batch, head, cursor, time, width)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionStream {
    pub data: Vec<f64>,
    pub batch: usize,
    pub heads: usize,
    pub cursors: usize,
    pub seq: usize,
    pub width: usize,
}

impl PositionStream {
    pub fn zeros(batch: usize, heads: usize, cursors: usize, seq: usize, width: usize) -> Self {
        Self { data: vec![0.0; batch * heads * cursors * seq * width], batch, heads, cursors, seq, width }
    }

    pub fn shape(&self) -> [usize; 5] {
        [self.batch, self.heads, self.cursors, self.seq, self.width]
    }

    fn offset(&self, b: usize, h: usize, c: usize, s: usize) -> usize {
        (((b * self.heads + h) * self.cursors + c) * self.seq + s) * self.width
    }

    pub fn get(&self, b: usize, h: usize, c: usize, s: usize) -> &[f64] {
        let o = self.offset(b, h, c, s);
        &self.data[o..o + self.width]
    }

    pub fn get_mut(&mut self, b: usize, h: usize, c: usize, s: usize) -> &mut [f64] {
        let o = self.offset(b, h, c, s);
        &mut self.data[o..o + self.width]
    }

    /// Concatenation of all cursor vectors of one `(batch, head, time)`.
    pub fn joint(&self, b: usize, h: usize, s: usize) -> Vec<f64> {
        (0..self.cursors).flat_map(|c| self.get(b, h, c, s).iter().copied()).collect()
    }
}

/// How cursors are grouped into heads and how streams are normalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalConfig {
    /// Cursors per head (`C`).
    pub cursors_per_head: usize,
    pub heads: usize,
    /// Append one absolute-position branch per head.
    pub concat_abs: bool,
    /// Global rescaling instead of per-block normalization.
    pub custom_ln: bool,
    /// Zero the appended absolute branch.
    pub ablate_abs: bool,
}

impl Default for HierarchicalConfig {
    fn default() -> Self {
        Self { cursors_per_head: 4, heads: 4, concat_abs: false, custom_ln: false, ablate_abs: false }
    }
}

impl HierarchicalConfig {
    /// Learned relative cursors on one side (query or key): `H * C`.
    pub fn total_cursors(&self) -> usize {
        self.heads * self.cursors_per_head
    }

    /// Branches per head after the optional absolute branch.
    pub fn branches_per_head(&self) -> usize {
        self.cursors_per_head + usize::from(self.concat_abs)
    }

    /// `H * (C + 1)` when the absolute branch is appended.
    pub fn total_branches(&self) -> usize {
        self.heads * self.branches_per_head()
    }
}

/// Superposes every histogram against the table with a single matrix
/// product, then regroups cursors into `(head, cursor)`.
///
/// Cursor index `i` of the block maps to head `i / O`, cursor `i % O`
/// where `O = cursors / heads`.
pub fn superpose(h: &HistogramBlock, heads: usize, table: &SinTable) -> Result<PositionStream> {
    if h.support != table.support() {
        return Err(PrismError::Dimension(format!(
            "histogram support {} vs table support {}",
            h.support,
            table.support()
        )));
    }
    if heads == 0 || !h.cursors.is_multiple_of(heads) {
        return Err(PrismError::Dimension(format!("{} cursors do not split over {heads} heads", h.cursors)));
    }
    let per_head = h.cursors / heads;
    let rows = h.cursors * h.batch * h.seq;
    let d = table.width();
    let mut flat = vec![0.0; rows * d];
    gemm(rows, h.support, d, &h.data, false, table.entries(), false, 0.0, &mut flat);

    let mut out = PositionStream::zeros(h.batch, heads, per_head, h.seq, d);
    for c in 0..h.cursors {
        let (head, cur) = (c / per_head, c % per_head);
        for b in 0..h.batch {
            for s in 0..h.seq {
                let src = ((c * h.batch + b) * h.seq + s) * d;
                out.get_mut(b, head, cur, s).copy_from_slice(&flat[src..src + d]);
            }
        }
    }
    Ok(out)
}

/// Optional absolute-branch concatenation followed by normalization.
///
/// The default path rescales every `(batch, head, time)` block over
/// `(cursor, width)` to norm `sqrt(d)`. The custom path multiplies everything
/// by `sqrt(d) / sqrt(C * a^2)` with `a = sqrt(d / 2)` the sinusoid row norm.
/// A block with zero norm is left at zero.
pub fn concat_and_normalize(
    enc_q: &PositionStream,
    enc_k: &PositionStream,
    cfg: &HierarchicalConfig,
    abs_table: &SinTable,
) -> Result<(PositionStream, PositionStream)> {
    if enc_q.shape() != enc_k.shape() {
        return Err(PrismError::Dimension(format!("query {:?} vs key {:?}", enc_q.shape(), enc_k.shape())));
    }
    if enc_q.heads != cfg.heads || enc_q.cursors != cfg.cursors_per_head {
        return Err(PrismError::Dimension(format!(
            "stream has {} heads x {} cursors, config says {} x {}",
            enc_q.heads, enc_q.cursors, cfg.heads, cfg.cursors_per_head
        )));
    }
    let d = enc_q.width;
    if cfg.concat_abs {
        if enc_q.seq > abs_table.support() {
            return Err(PrismError::Dimension(format!(
                "sequence of {} exceeds absolute table of {} rows",
                enc_q.seq,
                abs_table.support()
            )));
        }
        if abs_table.width() != d {
            return Err(PrismError::Dimension(format!("absolute table width {} vs stream width {d}", abs_table.width())));
        }
    }
    let q = append_abs(enc_q, cfg, abs_table);
    let k = append_abs(enc_k, cfg, abs_table);
    Ok((normalize(q, cfg, abs_table), normalize(k, cfg, abs_table)))
}

fn append_abs(enc: &PositionStream, cfg: &HierarchicalConfig, abs_table: &SinTable) -> PositionStream {
    if !cfg.concat_abs {
        return enc.clone();
    }
    let c_out = enc.cursors + 1;
    let mut out = PositionStream::zeros(enc.batch, enc.heads, c_out, enc.seq, enc.width);
    for b in 0..enc.batch {
        for h in 0..enc.heads {
            for s in 0..enc.seq {
                for c in 0..enc.cursors {
                    out.get_mut(b, h, c, s).copy_from_slice(enc.get(b, h, c, s));
                }
                if !cfg.ablate_abs {
                    out.get_mut(b, h, enc.cursors, s).copy_from_slice(abs_table.row(s));
                }
            }
        }
    }
    out
}

fn normalize(mut enc: PositionStream, cfg: &HierarchicalConfig, table: &SinTable) -> PositionStream {
    let d = enc.width as f64;
    if cfg.custom_ln {
        let alpha = table.row_norm();
        let scale = d.sqrt() / (enc.cursors as f64 * alpha * alpha).sqrt();
        enc.data.iter_mut().for_each(|v| *v *= scale);
        return enc;
    }
    for b in 0..enc.batch {
        for h in 0..enc.heads {
            for s in 0..enc.seq {
                let norm = (0..enc.cursors)
                    .map(|c| enc.get(b, h, c, s).iter().map(|v| v * v).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm == 0.0 {
                    continue;
                }
                let scale = d.sqrt() / norm;
                for c in 0..enc.cursors {
                    enc.get_mut(b, h, c, s).iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
    }
    enc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn row_zero_alternates_zero_one() {
        let t = build_sin_table(16, 8).unwrap();
        assert_eq!(t.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn odd_width_is_rejected() {
        assert!(matches!(build_sin_table(4, 7), Err(PrismError::Config(_))));
    }

    #[test]
    fn rows_have_constant_squared_norm() {
        let t = build_sin_table(300, 64).unwrap();
        for k in 0..300 {
            assert_abs_diff_eq!(dot(t.row(k), t.row(k)), 32.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn per_frequency_inner_product_is_cosine_of_gap() {
        let t = build_sin_table(128, 32).unwrap();
        for (k, l) in [(0, 5), (17, 3), (100, 99), (64, 64)] {
            for m in 0..16 {
                let a = &t.row(k)[2 * m..2 * m + 2];
                let b = &t.row(l)[2 * m..2 * m + 2];
                let want = (t.frequency(m) * (k as f64 - l as f64)).cos();
                assert_abs_diff_eq!(dot(a, b), want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn table_is_deterministic() {
        assert_eq!(build_sin_table(50, 16).unwrap(), build_sin_table(50, 16).unwrap());
    }

    fn random_block(rng: &mut ChaCha8Rng, c: usize, b: usize, s: usize, p: usize) -> HistogramBlock {
        let mut h = HistogramBlock::zeros(c, b, s, p);
        for row in h.data.chunks_mut(p) {
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = rng.gen::<f64>();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        h
    }

    #[test]
    fn superpose_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = build_sin_table(12, 10).unwrap();
        let h = random_block(&mut rng, 6, 2, 3, 12);
        let out = superpose(&h, 3, &table).unwrap();
        for c in 0..6 {
            for b in 0..2 {
                for s in 0..3 {
                    let mut want = vec![0.0; 10];
                    for k in 0..12 {
                        for j in 0..10 {
                            want[j] += h.at(c, b, s)[k] * table.row(k)[j];
                        }
                    }
                    for (a, w) in out.get(b, c / 2, c % 2, s).iter().zip(&want) {
                        assert_abs_diff_eq!(*a, *w, epsilon = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn one_hot_superposes_to_table_row() {
        let table = build_sin_table(20, 8).unwrap();
        let mut h = HistogramBlock::zeros(1, 1, 1, 20);
        h.at_mut(0, 0, 0)[13] = 1.0;
        let out = superpose(&h, 1, &table).unwrap();
        assert_eq!(out.get(0, 0, 0, 0), table.row(13));
    }

    #[test]
    fn two_point_mixture_is_average_of_rows() {
        let table = build_sin_table(20, 8).unwrap();
        let mut h = HistogramBlock::zeros(1, 1, 1, 20);
        h.at_mut(0, 0, 0)[2] = 0.5;
        h.at_mut(0, 0, 0)[9] = 0.5;
        let out = superpose(&h, 1, &table).unwrap();
        for (j, v) in out.get(0, 0, 0, 0).iter().enumerate() {
            assert_abs_diff_eq!(*v, 0.5 * (table.row(2)[j] + table.row(9)[j]), epsilon = 1e-15);
        }
    }

    #[test]
    fn superposition_is_not_the_mean_position() {
        // Highest frequency is 1 rad/step, so its half period is pi steps;
        // round to the nearest even offset so m / 2 is an integer position.
        let d = 16;
        let table = build_sin_table(32, d).unwrap();
        let m = 4;
        let mut h = HistogramBlock::zeros(1, 1, 1, 32);
        h.at_mut(0, 0, 0)[0] = 0.5;
        h.at_mut(0, 0, 0)[m] = 0.5;
        let out = superpose(&h, 1, &table).unwrap();
        let diff: f64 = out
            .get(0, 0, 0, 0)
            .iter()
            .zip(table.row(m / 2))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(diff >= 0.1 * (d as f64 / 2.0).sqrt(), "diff {diff}");
    }

    #[test]
    fn superpose_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let table = build_sin_table(9, 6).unwrap();
        let a = random_block(&mut rng, 2, 1, 2, 9);
        let b = random_block(&mut rng, 2, 1, 2, 9);
        let (wa, wb) = (0.3, 1.7);
        let mut mix = a.clone();
        for (m, (x, y)) in mix.data.iter_mut().zip(a.data.iter().zip(&b.data)) {
            *m = wa * x + wb * y;
        }
        let (sa, sb, sm) = (
            superpose(&a, 1, &table).unwrap(),
            superpose(&b, 1, &table).unwrap(),
            superpose(&mix, 1, &table).unwrap(),
        );
        for i in 0..sm.data.len() {
            assert_abs_diff_eq!(sm.data[i], wa * sa.data[i] + wb * sb.data[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn default_normalization_gives_sqrt_d_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let table = build_sin_table(16, 8).unwrap();
        let h = random_block(&mut rng, 8, 2, 5, 16);
        let enc = superpose(&h, 2, &table).unwrap();
        let cfg = HierarchicalConfig { cursors_per_head: 4, heads: 2, ..Default::default() };
        let (q, k) = concat_and_normalize(&enc, &enc, &cfg, &table).unwrap();
        for stream in [&q, &k] {
            for b in 0..2 {
                for hh in 0..2 {
                    for s in 0..5 {
                        let n = stream.joint(b, hh, s).iter().map(|v| v * v).sum::<f64>().sqrt();
                        assert_abs_diff_eq!(n, 8f64.sqrt(), epsilon = 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn custom_scaling_of_identical_one_hots() {
        let table = build_sin_table(16, 8).unwrap();
        let mut h = HistogramBlock::zeros(4, 1, 3, 16);
        for c in 0..4 {
            for s in 0..3 {
                h.at_mut(c, 0, s)[s + 2] = 1.0;
            }
        }
        let enc = superpose(&h, 1, &table).unwrap();
        let cfg = HierarchicalConfig { cursors_per_head: 4, heads: 1, custom_ln: true, ..Default::default() };
        let (q, _) = concat_and_normalize(&enc, &enc, &cfg, &table).unwrap();
        for s in 0..3 {
            let n = q.joint(0, 0, s).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 8f64.sqrt(), epsilon = 1e-6);
        }
    }

    #[test]
    fn ablated_absolute_branch_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let table = build_sin_table(16, 8).unwrap();
        let h = random_block(&mut rng, 2, 1, 4, 16);
        let enc = superpose(&h, 1, &table).unwrap();
        let cfg = HierarchicalConfig {
            cursors_per_head: 2,
            heads: 1,
            concat_abs: true,
            custom_ln: true,
            ablate_abs: true,
        };
        let (q, k) = concat_and_normalize(&enc, &enc, &cfg, &table).unwrap();
        assert_eq!(q.cursors, 3);
        for s in 0..4 {
            assert!(q.get(0, 0, 2, s).iter().all(|v| *v == 0.0));
            assert!(k.get(0, 0, 2, s).iter().all(|v| *v == 0.0));
        }
        let live = HierarchicalConfig { ablate_abs: false, ..cfg };
        let (q, _) = concat_and_normalize(&enc, &enc, &live, &table).unwrap();
        assert!(q.get(0, 0, 2, 1).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn absolute_branch_needs_enough_rows() {
        let table = build_sin_table(3, 8).unwrap();
        let enc = PositionStream::zeros(1, 1, 1, 5, 8);
        let cfg = HierarchicalConfig { cursors_per_head: 1, heads: 1, concat_abs: true, ..Default::default() };
        assert!(matches!(concat_and_normalize(&enc, &enc, &cfg, &table), Err(PrismError::Dimension(_))));
    }
}
