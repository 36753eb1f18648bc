//! Baseline and PRISM decoder-only transformers.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, ParamGroup, ParamId, ParamStore, Var};
use super::gru::{uniform, Gru};
use super::ops::concat;
use super::prism_ops::{block_normalize, copy_distribution, histogram_scan, hybrid, orthogonality_penalty, position_scores, ScanSpec};
use super::tensor::Tensor;
use crate::attn_scores::logit;
use crate::error::{PrismError, Result};
use crate::histfilter::DEFAULT_EPSILON;
use crate::posenc::{build_sin_table, HierarchicalConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Absolute sinusoidal positions added to the embeddings.
    Baseline,
    /// Histogram-filter position streams mixed into the attention scores.
    Prism,
}

impl std::str::FromStr for ModelKind {
    type Err = PrismError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" | "ape" => Ok(ModelKind::Baseline),
            "prism" => Ok(ModelKind::Prism),
            _ => Err(PrismError::Config(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopyPolicy {
    Off,
    /// Every fifth query cursor may copy; its key cursor only increments.
    EveryFifthQuery,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub vocab_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Token embedding width; a learned projection maps it to `d_model`
    /// when the two differ.
    pub embed_dim: usize,
    pub d_ff: usize,
    pub d_pe: usize,
    pub cursors_per_head: usize,
    /// Histogram support `P`; also the number of absolute positions.
    pub support: usize,
    pub gru_hidden: usize,
    /// Transformer layers that a PRISM block is inserted before.
    pub prism_layers: Vec<usize>,
    pub copy_policy: CopyPolicy,
    pub copy_dim: usize,
    pub concat_abs: bool,
    pub custom_ln: bool,
    pub ablate_abs: bool,
    pub max_len: usize,
    pub epsilon: f64,
    pub orth_lambda: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(ModelKind::Prism)
    }
}

impl ModelConfig {
    pub fn desk(kind: ModelKind) -> Self {
        Self {
            kind,
            vocab_size: 64,
            layers: 2,
            heads: 4,
            d_model: 128,
            embed_dim: 128,
            d_ff: 512,
            d_pe: 64,
            cursors_per_head: 4,
            support: 256,
            gru_hidden: 100,
            prism_layers: vec![0],
            copy_policy: CopyPolicy::Off,
            copy_dim: 16,
            concat_abs: false,
            custom_ln: false,
            ablate_abs: false,
            max_len: 2048,
            epsilon: DEFAULT_EPSILON,
            orth_lambda: 1e-3,
        }
    }

    /// Full-size architecture, kept for reference; far beyond a CPU budget.
    pub fn full(kind: ModelKind) -> Self {
        Self {
            layers: 5,
            heads: 8,
            d_model: 512,
            embed_dim: if kind == ModelKind::Prism { 192 } else { 512 },
            d_ff: 2048,
            d_pe: 340,
            support: 2048,
            ..Self::desk(kind)
        }
    }

    /// Tiny configuration for gradient checks and fast tests.
    pub fn tiny(kind: ModelKind) -> Self {
        Self {
            layers: 2,
            heads: 2,
            d_model: 8,
            embed_dim: 8,
            d_ff: 16,
            d_pe: 4,
            cursors_per_head: 2,
            support: 12,
            gru_hidden: 5,
            copy_dim: 3,
            ..Self::desk(kind)
        }
    }

    pub fn hierarchical(&self) -> HierarchicalConfig {
        HierarchicalConfig {
            cursors_per_head: self.cursors_per_head,
            heads: self.heads,
            concat_abs: self.concat_abs,
            custom_ln: self.custom_ln,
            ablate_abs: self.ablate_abs,
        }
    }

    /// Query cursors across all heads; the same number of key cursors exist.
    pub fn query_cursors(&self) -> usize {
        self.heads * self.cursors_per_head
    }

    pub fn histograms(&self) -> usize {
        2 * self.query_cursors()
    }

    /// Cursor branches per head seen by the score, including the absolute one.
    pub fn branches(&self) -> usize {
        self.cursors_per_head + usize::from(self.concat_abs)
    }

    pub fn copy_cursors(&self) -> Vec<usize> {
        match self.copy_policy {
            CopyPolicy::Off => vec![],
            CopyPolicy::EveryFifthQuery => (0..self.query_cursors()).filter(|i| i % 5 == 0).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PrismError::Config(m));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 {
            return bad("layers, heads and d_model must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.heads));
        }
        if !self.d_pe.is_multiple_of(2) || self.d_pe == 0 {
            return bad(format!("d_pe must be positive and even, got {}", self.d_pe));
        }
        if self.kind == ModelKind::Baseline && !self.d_model.is_multiple_of(2) {
            return bad("absolute encodings need an even d_model".into());
        }
        if self.support < 2 {
            return bad("histogram support must be at least 2".into());
        }
        if self.kind == ModelKind::Prism {
            if self.prism_layers.is_empty() {
                return bad("a PRISM model needs at least one PRISM layer".into());
            }
            if let Some(l) = self.prism_layers.iter().find(|l| **l >= self.layers) {
                return bad(format!("PRISM layer {l} beyond {} layers", self.layers));
            }
            if self.cursors_per_head == 0 || self.gru_hidden == 0 {
                return bad("cursors and GRU width must be positive".into());
            }
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct LayerParams {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    /// Position-score coefficients and mixing logit for layers fed by a
    /// position stream.
    alpha: Option<ParamId>,
    mu: Option<ParamId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct PrismParams {
    gru: Gru,
    gate_w: ParamId,
    gate_b: ParamId,
    gamma_raw: ParamId,
    copy_q: Option<ParamId>,
    copy_k: Option<ParamId>,
    copy_nc_w: Option<ParamId>,
    copy_nc_b: Option<ParamId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    tok_emb: ParamId,
    proj: Option<ParamId>,
    layers: Vec<LayerParams>,
    prism: Vec<PrismParams>,
    ln_f_g: ParamId,
    ln_f_b: ParamId,
}

/// A model: configuration, parameters and their layout.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    layout: Layout,
    sin_support: Rc<Tensor>,
    ape: Option<Rc<Tensor>>,
}

/// How a forward pass treats positions.
#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Per-sequence absolute offset for the baseline encodings; zeros if
    /// `None`.
    pub ape_offsets: Option<Vec<usize>>,
    /// Drop the position path entirely (no streams, no mixing).
    pub content_only: bool,
    /// Replace the normalized position streams by zeros.
    pub zero_position_streams: bool,
    /// Keep gate, histogram and attention tensors.
    pub trace: bool,
}

/// Intermediate tensors of one PRISM block.
#[derive(Clone, Debug)]
pub struct PrismTrace {
    /// `[N, B, S]`
    pub reset: Rc<Tensor>,
    /// `[N, B, S, 3]` as (increment, decrement, keep)
    pub actions: Rc<Tensor>,
    /// `[M, B, S, P + 1]` when the copy branch is active
    pub copy: Option<Rc<Tensor>>,
    /// `[N, B, S, P]`
    pub histograms: Rc<Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    pub prism: Vec<PrismTrace>,
    /// Per layer `[B, H, S, S]` attention probabilities.
    pub attention: Vec<Rc<Tensor>>,
}

pub struct Forward<'g> {
    /// `[B, S, vocab]`
    pub logits: Var<'g>,
    pub trace: Option<ForwardTrace>,
}

/// Token batch padded to a common length, with next-token targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub batch: usize,
    pub seq: usize,
    /// `[B * S]` row-major.
    pub tokens: Vec<usize>,
    /// Target for position `t` is the token at `t + 1`.
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Batch {
    /// Builds a batch in which position `t` is supervised when token `t + 1`
    /// lies at or after `supervised_from` and is not padding.
    pub fn new(seqs: &[(Vec<usize>, usize)], pad: usize) -> Self {
        let batch = seqs.len();
        let seq = seqs.iter().map(|(t, _)| t.len()).max().unwrap_or(0);
        let mut tokens = vec![pad; batch * seq];
        let mut targets = vec![pad; batch * seq];
        let mut mask = vec![false; batch * seq];
        for (b, (toks, from)) in seqs.iter().enumerate() {
            tokens[b * seq..b * seq + toks.len()].copy_from_slice(toks);
            for t in 0..toks.len().saturating_sub(1) {
                targets[b * seq + t] = toks[t + 1];
                mask[b * seq + t] = t + 1 >= *from;
            }
        }
        Self { batch, seq, tokens, targets, mask }
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let (d, e, f) = (c.d_model, c.embed_dim, c.d_ff);
        let main = |store: &mut ParamStore, name: String, r: usize, k: usize, rng: &mut ChaCha8Rng| {
            store.add(name, ParamGroup::Main, uniform(&[r, k], r, rng))
        };

        let tok_emb = store.add("tok_emb", ParamGroup::Main, uniform(&[c.vocab_size, e], e, &mut rng));
        let proj = (e != d).then(|| main(&mut store, "proj_in".into(), e, d, &mut rng));

        let first_prism = if c.kind == ModelKind::Prism { c.prism_layers.iter().min().copied() } else { None };
        let mut layers = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let p = format!("layer{l}");
            let ones = |n| Tensor::filled(&[n], 1.0);
            let ln1_g = store.add(format!("{p}.ln1.g"), ParamGroup::NoDecay, ones(d));
            let ln1_b = store.add(format!("{p}.ln1.b"), ParamGroup::NoDecay, Tensor::zeros(&[d]));
            let wq = main(&mut store, format!("{p}.wq"), d, d, &mut rng);
            let wk = main(&mut store, format!("{p}.wk"), d, d, &mut rng);
            let wv = main(&mut store, format!("{p}.wv"), d, d, &mut rng);
            let wo = main(&mut store, format!("{p}.wo"), d, d, &mut rng);
            let ln2_g = store.add(format!("{p}.ln2.g"), ParamGroup::NoDecay, ones(d));
            let ln2_b = store.add(format!("{p}.ln2.b"), ParamGroup::NoDecay, Tensor::zeros(&[d]));
            let w1 = main(&mut store, format!("{p}.w1"), d, f, &mut rng);
            let b1 = store.add(format!("{p}.b1"), ParamGroup::NoDecay, Tensor::zeros(&[f]));
            let w2 = main(&mut store, format!("{p}.w2"), f, d, &mut rng);
            let b2 = store.add(format!("{p}.b2"), ParamGroup::NoDecay, Tensor::zeros(&[d]));
            let fed = first_prism.is_some_and(|fp| l >= fp);
            let alpha = fed.then(|| {
                store.add(format!("{p}.alpha"), ParamGroup::Alpha, Tensor::filled(&[c.heads, c.branches()], 1.0))
            });
            let mu = fed.then(|| store.add(format!("{p}.mu_logit"), ParamGroup::NoDecay, Tensor::filled(&[c.heads], logit(0.5))));
            layers.push(LayerParams { ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2, alpha, mu });
        }

        let mut prism = Vec::new();
        if c.kind == ModelKind::Prism {
            let n_hist = c.histograms();
            let m = c.copy_cursors().len();
            for (i, _) in c.prism_layers.iter().enumerate() {
                let p = format!("prism{i}");
                let gru = Gru::new(&mut store, &format!("{p}.gru"), d, c.gru_hidden, &mut rng);
                // Small gate weights keep the initial gates near uniform.
                let mut gw = uniform(&[c.gru_hidden, n_hist * 4], c.gru_hidden, &mut rng);
                gw.data.iter_mut().for_each(|v| *v *= 0.1);
                let gate_w = store.add(format!("{p}.gate_w"), ParamGroup::Main, gw);
                let gate_b = store.add(format!("{p}.gate_b"), ParamGroup::NoDecay, Tensor::zeros(&[n_hist * 4]));
                // gamma = exp(raw) + 1 = 2 at initialization.
                let gamma_raw = store.add(format!("{p}.gamma_raw"), ParamGroup::NoDecay, Tensor::zeros(&[n_hist]));
                let (copy_q, copy_k, copy_nc_w, copy_nc_b) = if m > 0 {
                    let h = c.gru_hidden;
                    (
                        Some(main(&mut store, format!("{p}.copy_q"), h, m * c.copy_dim, &mut rng)),
                        Some(main(&mut store, format!("{p}.copy_k"), h, m * c.copy_dim, &mut rng)),
                        Some(main(&mut store, format!("{p}.copy_nc_w"), h, m, &mut rng)),
                        Some(store.add(format!("{p}.copy_nc_b"), ParamGroup::NoDecay, Tensor::zeros(&[m]))),
                    )
                } else {
                    (None, None, None, None)
                };
                prism.push(PrismParams { gru, gate_w, gate_b, gamma_raw, copy_q, copy_k, copy_nc_w, copy_nc_b });
            }
        }

        let ln_f_g = store.add("ln_f.g", ParamGroup::NoDecay, Tensor::filled(&[d], 1.0));
        let ln_f_b = store.add("ln_f.b", ParamGroup::NoDecay, Tensor::zeros(&[d]));

        let layout = Layout { tok_emb, proj, layers, prism, ln_f_g, ln_f_b };
        Self::assemble(config, store, layout)
    }

    fn assemble(config: ModelConfig, params: ParamStore, layout: Layout) -> Result<Self> {
        let sin_support = Rc::new(build_sin_table(config.support, config.d_pe)?.to_tensor());
        let ape = match config.kind {
            ModelKind::Baseline => Some(Rc::new(build_sin_table(config.support, config.d_model)?.to_tensor())),
            ModelKind::Prism => None,
        };
        Ok(Self { config, params, layout, sin_support, ape })
    }

    /// Rebuilds a model from a configuration and previously saved values.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let fresh = Self::new(config, 0)?;
        if fresh.params.len() != params.len() {
            return Err(PrismError::Config(format!(
                "checkpoint has {} parameters, configuration expects {}",
                params.len(),
                fresh.params.len()
            )));
        }
        for (a, b) in fresh.params.entries.iter().zip(&params.entries) {
            if a.name != b.name || a.value.shape != b.value.shape || a.group != b.group {
                return Err(PrismError::Config(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    a.name, a.value.shape, b.name, b.value.shape
                )));
            }
        }
        Self::assemble(fresh.config, params, fresh.layout)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Checks tokens against the vocabulary and length limits.
    pub fn check_input(&self, batch: &Batch) -> Result<()> {
        if let Some(&t) = batch.tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(PrismError::TokenOutOfRange(t));
        }
        let limit = match self.config.kind {
            ModelKind::Baseline => self.config.max_len.min(self.config.support),
            ModelKind::Prism => self.config.max_len,
        };
        if batch.seq > limit {
            return Err(PrismError::Overlength { len: batch.seq, max: limit });
        }
        Ok(())
    }

    /// Runs the model on a batch; `params` are the bound parameter vars.
    pub fn forward<'g>(&self, graph: &'g Graph, params: &[Var<'g>], batch: &Batch, opts: &ForwardOptions) -> Result<Forward<'g>> {
        self.check_input(batch)?;
        let c = &self.config;
        let l = &self.layout;
        let (b, s, d) = (batch.batch, batch.seq, c.d_model);
        let p = |id: ParamId| params[id.0];

        let mut x = p(l.tok_emb).embedding(&batch.tokens).scale((d as f64).sqrt());
        if let Some(proj) = l.proj {
            x = x.matmul(p(proj));
        }
        let mut x = x.reshape(&[b, s, d]);

        if let Some(ape) = &self.ape {
            let offsets = opts.ape_offsets.clone().unwrap_or_else(|| vec![0; b]);
            if offsets.len() != b {
                return Err(PrismError::Dimension(format!("{} offsets for batch of {b}", offsets.len())));
            }
            let mut pe = Vec::with_capacity(b * s * d);
            for &o in &offsets {
                if o + s > c.support {
                    return Err(PrismError::Overlength { len: o + s, max: c.support });
                }
                pe.extend_from_slice(&ape.data[o * d..(o + s) * d]);
            }
            x = x.add(graph.constant(Tensor::new(&[b, s, d], pe)));
        }

        let mut trace = opts.trace.then(ForwardTrace::default);
        let use_prism = c.kind == ModelKind::Prism && !opts.content_only;
        let mut stream: Option<Var<'g>> = None;
        let heads = c.heads;
        let dh = d / heads;
        for (li, lp) in l.layers.iter().enumerate() {
            if use_prism {
                if let Some(pi) = c.prism_layers.iter().position(|&pl| pl == li) {
                    let (st, pt) = self.position_stream(graph, params, pi, x, opts)?;
                    stream = Some(st);
                    if let (Some(tr), Some(pt)) = (trace.as_mut(), pt) {
                        tr.prism.push(pt);
                    }
                }
            }
            // Attention.
            let h = x.layer_norm(p(lp.ln1_g), p(lp.ln1_b));
            let split = |v: Var<'g>| v.reshape(&[b, s, heads, dh]).permute(&[0, 2, 1, 3]).reshape(&[b * heads, s, dh]);
            let q = split(h.matmul(p(lp.wq)));
            let k = split(h.matmul(p(lp.wk)));
            let v = split(h.matmul(p(lp.wv)));
            let content = q.bmm(k, true).scale(1.0 / (dh as f64).sqrt()).reshape(&[b, heads, s, s]);
            let scores = match (stream, lp.alpha, lp.mu) {
                (Some(st), Some(alpha), Some(mu)) => {
                    let pos = position_scores(st, p(alpha), c.branches());
                    hybrid(content, pos, p(mu))
                }
                _ => content,
            };
            let attn = scores.causal_softmax();
            if let Some(tr) = trace.as_mut() {
                tr.attention.push(attn.value());
            }
            let o = attn
                .reshape(&[b * heads, s, s])
                .bmm(v, false)
                .reshape(&[b, heads, s, dh])
                .permute(&[0, 2, 1, 3])
                .reshape(&[b, s, d]);
            x = x.add(o.matmul(p(lp.wo)));
            // Feed-forward.
            let h = x.layer_norm(p(lp.ln2_g), p(lp.ln2_b));
            let ff = h.matmul(p(lp.w1)).add_row(p(lp.b1)).gelu().matmul(p(lp.w2)).add_row(p(lp.b2));
            x = x.add(ff);
        }

        let mut y = x.layer_norm(p(l.ln_f_g), p(l.ln_f_b));
        if let Some(proj) = l.proj {
            y = y.matmul_t(p(proj));
        }
        let logits = y.matmul_t(p(l.tok_emb));
        Ok(Forward { logits, trace })
    }

    /// GRU gates, histogram scan, superposition and normalization for PRISM
    /// block `pi`. Returns the `[2, B, H, S, C' * d_pe]` stream.
    fn position_stream<'g>(
        &self,
        graph: &'g Graph,
        params: &[Var<'g>],
        pi: usize,
        x: Var<'g>,
        opts: &ForwardOptions,
    ) -> Result<(Var<'g>, Option<PrismTrace>)> {
        let c = &self.config;
        let pp = &self.layout.prism[pi];
        let p = |id: ParamId| params[id.0];
        let shape = x.shape();
        let (b, s) = (shape[0], shape[1]);
        let n = c.histograms();
        let sup = c.support;

        let hs = pp.gru.forward(x, params);
        let gates = hs
            .matmul(p(pp.gate_w))
            .add_row(p(pp.gate_b))
            .reshape(&[b, s, n, 4])
            .permute(&[2, 0, 1, 3]);
        let reset = gates.narrow_last(0, 1).reshape(&[n, b, s]).sigmoid();
        let actions = gates.narrow_last(1, 3).softmax_last();

        let copy_cursors = c.copy_cursors();
        let m = copy_cursors.len();
        let mut spec = ScanSpec::plain(n, sup, c.epsilon);
        let copy = if m > 0 {
            let nq = c.query_cursors();
            for (row, &qc) in copy_cursors.iter().enumerate() {
                spec.copy_rows[qc] = Some(row);
                spec.frozen[nq + qc] = true;
            }
            let dc = c.copy_dim;
            let proj = |w: ParamId| hs.matmul(p(w)).reshape(&[b, s, m, dc]).permute(&[2, 0, 1, 3]).reshape(&[m * b, s, dc]);
            let (cq, ck) = (proj(pp.copy_q.unwrap()), proj(pp.copy_k.unwrap()));
            let logits = cq.bmm(ck, true).scale(1.0 / (dc as f64).sqrt()).reshape(&[m, b, s, s]);
            let nc = hs.matmul(p(pp.copy_nc_w.unwrap())).add_row(p(pp.copy_nc_b.unwrap())).permute(&[2, 0, 1]);
            Some(copy_distribution(logits, nc, sup))
        } else {
            None
        };

        let hist = histogram_scan(reset, actions, p(pp.gamma_raw), copy, &spec);
        let trace = opts.trace.then(|| PrismTrace {
            reset: reset.value(),
            actions: actions.value(),
            copy: copy.map(|v| v.value()),
            histograms: hist.value(),
        });

        let (heads, cur, dpe) = (c.heads, c.cursors_per_head, c.d_pe);
        let emb = hist
            .reshape(&[n * b * s, sup])
            .matmul_const(self.sin_support.clone())
            .reshape(&[2, heads, cur, b, s, dpe])
            .permute(&[0, 3, 1, 4, 2, 5]);
        let emb = if c.concat_abs {
            let mut abs = vec![0.0; 2 * b * heads * s * dpe];
            if !c.ablate_abs {
                let table = build_sin_table(s, dpe)?;
                for (i, chunk) in abs.chunks_mut(dpe).enumerate() {
                    chunk.copy_from_slice(table.row(i % s));
                }
            }
            let abs = graph.constant(Tensor::new(&[2, b, heads, s, 1, dpe], abs));
            concat(&[emb, abs], 4)
        } else {
            emb
        };
        let br = c.branches();
        let flat = emb.reshape(&[2, b, heads, s, br * dpe]);
        let dn = dpe as f64;
        let normed = if c.custom_ln {
            flat.scale(dn.sqrt() / (br as f64 * dn / 2.0).sqrt())
        } else {
            block_normalize(flat, br * dpe, dn.sqrt())
        };
        let out = if opts.zero_position_streams {
            graph.constant(Tensor::zeros(&normed.shape()))
        } else {
            normed
        };
        Ok((out, trace))
    }

    /// Mean supervised cross-entropy plus the recurrent orthogonality
    /// penalty. Returns `(total, cross_entropy)`.
    pub fn loss<'g>(&self, graph: &'g Graph, params: &[Var<'g>], batch: &Batch, opts: &ForwardOptions) -> Result<(Var<'g>, Var<'g>)> {
        let fwd = self.forward(graph, params, batch, opts)?;
        let v = self.config.vocab_size;
        let ce = fwd.logits.reshape(&[batch.batch * batch.seq, v]).masked_cross_entropy(&batch.targets, &batch.mask);
        let mut total = ce;
        if self.config.orth_lambda > 0.0 {
            for pp in &self.layout.prism {
                for w in pp.gru.recurrent_blocks() {
                    total = total.add(orthogonality_penalty(params[w.0], self.config.orth_lambda));
                }
            }
        }
        Ok((total, ce))
    }

    /// Logits `[B, S, vocab]` without building a backward graph.
    pub fn logits(&self, batch: &Batch, opts: &ForwardOptions) -> Result<Tensor> {
        let g = Graph::new();
        let params = g.bind_frozen(&self.params);
        let f = self.forward(&g, &params, batch, opts)?;
        let t = (*f.logits.value()).clone();
        Ok(t)
    }

    /// Forward pass keeping the gate, histogram and attention tensors.
    pub fn trace(&self, batch: &Batch) -> Result<ForwardTrace> {
        let g = Graph::new();
        let params = g.bind_frozen(&self.params);
        let opts = ForwardOptions { trace: true, ..Default::default() };
        Ok(self.forward(&g, &params, batch, &opts)?.trace.unwrap_or_default())
    }

    /// Greedy decoding from `prefix` until `eos` or `max_new` tokens.
    pub fn generate(&self, prefix: &[usize], max_new: usize, eos: usize) -> Result<Vec<usize>> {
        let mut seq = prefix.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_new {
            let batch = Batch::new(&[(seq.clone(), seq.len())], 0);
            let logits = self.logits(&batch, &ForwardOptions::default())?;
            let v = self.config.vocab_size;
            let last = &logits.data[(seq.len() - 1) * v..seq.len() * v];
            let next = argmax(last);
            out.push(next);
            seq.push(next);
            if next == eos {
                break;
            }
        }
        Ok(out)
    }

    /// Draws per-sequence offsets in `[0, P - S]` for the baseline.
    pub fn random_offsets(&self, batch: usize, seq: usize, rng: &mut impl Rng) -> Option<Vec<usize>> {
        (self.config.kind == ModelKind::Baseline).then(|| {
            let hi = self.config.support.saturating_sub(seq);
            (0..batch).map(|_| rng.gen_range(0..=hi)).collect()
        })
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.find(name)
    }

    /// Sets every mixing gate to a fixed probability.
    pub fn set_all_mu(&mut self, mu: f64) {
        for lp in &self.layout.layers {
            if let Some(id) = lp.mu {
                self.params.get_mut(id).data.fill(logit(mu));
            }
        }
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
