//! Differentiable histogram filter over latent relative positions.
//!
//! Each cursor carries a categorical distribution over `P` positions. One
//! update marginalizes over a binary reset decision and a ternary
//! increment / decrement / keep action, optionally mixes in a copy jump, and
//! finally power-sharpens the result. The per-step cost is `O(P)`.
//!
//! The typed API (`Histogram`, `GateProbs`, `update_step`, ...) validates its
//! inputs. The slice kernels at the bottom of the module (`propagate`,
//! `sharpen_into` and their vector-Jacobian products) skip validation and are
//! what the training path calls in its inner loop.

use crate::error::{PrismError, Result};

/// Default additive floor inside the sharpening power.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Tolerance on "sums to one" checks for gate and histogram vectors.
pub const PROB_TOL: f64 = 1e-6;

/// Categorical distribution over relative positions for one cursor.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    mass: Vec<f64>,
    cursor_id: usize,
}

impl Histogram {
    pub fn new(mass: Vec<f64>, cursor_id: usize) -> Result<Self> {
        if mass.is_empty() {
            return Err(PrismError::Dimension("histogram support must be non-empty".into()));
        }
        check_nonnegative(&mass, "histogram")?;
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(PrismError::Probability(format!("histogram sums to {total}")));
        }
        Ok(Self { mass, cursor_id })
    }

    pub fn one_hot(support: usize, index: usize) -> Result<Self> {
        if index >= support {
            return Err(PrismError::Dimension(format!(
                "one-hot index {index} outside support {support}"
            )));
        }
        let mut mass = vec![0.0; support];
        mass[index] = 1.0;
        Ok(Self { mass, cursor_id: 0 })
    }

    pub fn uniform(support: usize) -> Result<Self> {
        if support == 0 {
            return Err(PrismError::Dimension("histogram support must be non-empty".into()));
        }
        Ok(Self { mass: vec![1.0 / support as f64; support], cursor_id: 0 })
    }

    pub fn with_cursor(mut self, cursor_id: usize) -> Self {
        self.cursor_id = cursor_id;
        self
    }

    pub fn support(&self) -> usize {
        self.mass.len()
    }

    pub fn cursor_id(&self) -> usize {
        self.cursor_id
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    /// Index of the largest entry (first one on ties).
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = i;
            }
        }
        best
    }

    /// Internal constructor for intermediates that need not be normalized.
    fn raw(mass: Vec<f64>, cursor_id: usize) -> Self {
        Self { mass, cursor_id }
    }
}

/// Gate probabilities for one cursor at one timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct GateProbs {
    pub reset: f64,
    pub incr: f64,
    pub decr: f64,
    pub keep: f64,
    /// `P` copy targets followed by the terminal no-copy slot.
    pub copy: Option<Vec<f64>>,
}

impl GateProbs {
    pub fn new(reset: f64, incr: f64, decr: f64, keep: f64) -> Result<Self> {
        let g = Self { reset, incr, decr, keep, copy: None };
        g.validate()?;
        Ok(g)
    }

    pub fn with_copy(mut self, copy: Vec<f64>) -> Result<Self> {
        self.copy = Some(copy);
        self.validate()?;
        Ok(self)
    }

    /// Certain keep without reset: the identity transition.
    pub fn identity() -> Self {
        Self { reset: 0.0, incr: 0.0, decr: 0.0, keep: 1.0, copy: None }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("reset", self.reset),
            ("incr", self.incr),
            ("decr", self.decr),
            ("keep", self.keep),
        ] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(PrismError::Probability(format!("p_{name} = {p} not in [0, 1]")));
            }
        }
        let action = self.incr + self.decr + self.keep;
        if (action - 1.0).abs() > PROB_TOL {
            return Err(PrismError::Probability(format!("action gate sums to {action}")));
        }
        if let Some(copy) = &self.copy {
            check_nonnegative(copy, "copy distribution")?;
            let total: f64 = copy.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(PrismError::Probability(format!("copy distribution sums to {total}")));
            }
        }
        Ok(())
    }

    fn as_step(&self) -> StepGates<'_> {
        StepGates {
            reset: self.reset,
            incr: self.incr,
            decr: self.decr,
            keep: self.keep,
            copy: self.copy.as_deref(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SharpenParams {
    pub gamma: f64,
    pub epsilon: f64,
}

impl SharpenParams {
    pub fn new(gamma: f64, epsilon: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(PrismError::Numeric(format!("gamma must be positive, got {gamma}")));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(PrismError::Numeric(format!("epsilon must be non-negative, got {epsilon}")));
        }
        Ok(Self { gamma, epsilon })
    }

    /// `gamma = 1, epsilon = 0`: sharpening reduces to renormalization.
    pub fn neutral() -> Self {
        Self { gamma: 1.0, epsilon: 0.0 }
    }
}

impl Default for SharpenParams {
    fn default() -> Self {
        Self { gamma: 2.0, epsilon: DEFAULT_EPSILON }
    }
}

/// Result of one update with the pre-sharpen intermediate kept around.
#[derive(Clone, Debug)]
pub struct StepTrace {
    pub pre_sharpen: Vec<f64>,
    pub histogram: Histogram,
}

/// One full update: reset / shift / keep flows, optional copy jump, sharpen.
pub fn update_step(h: &Histogram, g: &GateProbs, s: &SharpenParams) -> Result<Histogram> {
    Ok(update_step_traced(h, g, s)?.histogram)
}

/// Same as [`update_step`] but also returns the pre-sharpen mass vector.
pub fn update_step_traced(h: &Histogram, g: &GateProbs, s: &SharpenParams) -> Result<StepTrace> {
    check_nonnegative(&h.mass, "histogram")?;
    g.validate()?;
    if let Some(copy) = &g.copy {
        if copy.len() != h.support() + 1 {
            return Err(PrismError::Dimension(format!(
                "copy distribution has {} slots, expected {}",
                copy.len(),
                h.support() + 1
            )));
        }
    }
    let mut pre = vec![0.0; h.support()];
    propagate(&h.mass, &g.as_step(), &mut pre);
    let mut out = vec![0.0; h.support()];
    sharpen_into(&pre, s.gamma, s.epsilon, &mut out);
    Ok(StepTrace { pre_sharpen: pre, histogram: Histogram::raw(out, h.cursor_id) })
}

/// Power-sharpen with renormalization: `(h + eps)^gamma / sum`.
pub fn sharpen(h: &Histogram, s: &SharpenParams) -> Result<Histogram> {
    check_nonnegative(&h.mass, "histogram")?;
    let mut out = vec![0.0; h.support()];
    sharpen_into(&h.mass, s.gamma, s.epsilon, &mut out);
    Ok(Histogram::raw(out, h.cursor_id))
}

/// Dense `P x P` row-stochastic transition for the reset / no-reset blocks.
///
/// Row `i` holds the outgoing mass of position `i`, so the update reads
/// `h' = h^T M`.
pub fn transition_matrix(support: usize, g: &GateProbs) -> Result<Vec<Vec<f64>>> {
    g.validate()?;
    if g.copy.is_some() {
        return Err(PrismError::Dimension(
            "the dense transition form covers the reset and shift blocks only".into(),
        ));
    }
    if support == 0 {
        return Err(PrismError::Dimension("empty support".into()));
    }
    let last = support - 1;
    let (wi, wd, wk) = no_reset_weights(&g.as_step());
    let mut m = vec![vec![0.0; support]; support];
    for (i, row) in m.iter_mut().enumerate() {
        row[1.min(last)] += g.reset * g.incr;
        row[0] += g.reset * (g.decr + g.keep);
        row[i] += wk;
        row[(i + 1).min(last)] += wi;
        row[i.saturating_sub(1)] += wd;
    }
    Ok(m)
}

/// Pre-sharpen update computed as a dense vector-matrix product.
pub fn apply_transition_matrix(h: &Histogram, g: &GateProbs) -> Result<Histogram> {
    check_nonnegative(&h.mass, "histogram")?;
    let m = transition_matrix(h.support(), g)?;
    let mut out = vec![0.0; h.support()];
    for (hi, row) in h.mass.iter().zip(&m) {
        for (o, mij) in out.iter_mut().zip(row) {
            *o += hi * mij;
        }
    }
    Ok(Histogram::raw(out, h.cursor_id))
}

fn check_nonnegative(v: &[f64], what: &str) -> Result<()> {
    for (i, &x) in v.iter().enumerate() {
        if x.is_nan() {
            return Err(PrismError::Numeric(format!("{what}[{i}] is NaN")));
        }
        if x < 0.0 || x.is_infinite() {
            return Err(PrismError::Numeric(format!("{what}[{i}] = {x} is not a finite non-negative value")));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Slice kernels
// ---------------------------------------------------------------------------

/// Unvalidated gate view used by the kernels.
#[derive(Clone, Copy, Debug)]
pub struct StepGates<'a> {
    pub reset: f64,
    pub incr: f64,
    pub decr: f64,
    pub keep: f64,
    pub copy: Option<&'a [f64]>,
}

/// Gradients with respect to the entries of a [`StepGates`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepGateGrads {
    pub reset: f64,
    pub incr: f64,
    pub decr: f64,
    pub keep: f64,
}

fn no_reset_weights(g: &StepGates<'_>) -> (f64, f64, f64) {
    let stay = 1.0 - g.reset;
    (stay * g.incr, stay * g.decr, stay * g.keep)
}

/// Reset and shift flows (plus the copy jump when present), without
/// sharpening. `out` is overwritten.
pub fn propagate(h: &[f64], g: &StepGates<'_>, out: &mut [f64]) {
    let p = h.len();
    debug_assert_eq!(out.len(), p);
    let last = p - 1;
    let total: f64 = h.iter().sum();
    out.fill(0.0);

    out[1.min(last)] += total * g.reset * g.incr;
    out[0] += total * g.reset * (g.decr + g.keep);

    let (wi, wd, wk) = no_reset_weights(g);
    for i in 0..p {
        let hi = h[i];
        out[i] += hi * wk;
        out[(i + 1).min(last)] += hi * wi;
        out[i.saturating_sub(1)] += hi * wd;
    }

    if let Some(copy) = g.copy {
        debug_assert_eq!(copy.len(), p + 1);
        let no_copy = copy[p];
        for (o, c) in out.iter_mut().zip(&copy[..p]) {
            *o = *o * no_copy + total * c;
        }
    }
}

/// Vector-Jacobian product of [`propagate`].
///
/// Accumulates into `dh`, `dgates` and (when the copy branch is active)
/// `dcopy`, which must have `P + 1` slots.
pub fn propagate_vjp(
    h: &[f64],
    g: &StepGates<'_>,
    dout: &[f64],
    dh: &mut [f64],
    dgates: &mut StepGateGrads,
    dcopy: Option<&mut [f64]>,
) {
    let p = h.len();
    let last = p - 1;
    let total: f64 = h.iter().sum();
    let (wi, wd, wk) = no_reset_weights(g);

    // Gradient flowing into the reset + shift part ("base").
    let mut dtotal = 0.0;
    let scaled;
    let dbase: &[f64] = match g.copy {
        Some(copy) => {
            let no_copy = copy[p];
            let dcopy = dcopy.expect("copy gradient buffer required when copy is active");
            // Recompute the base flows to get d(no_copy).
            let mut base = vec![0.0; p];
            propagate(h, &StepGates { copy: None, ..*g }, &mut base);
            let mut dno_copy = 0.0;
            for k in 0..p {
                dno_copy += dout[k] * base[k];
                dcopy[k] += total * dout[k];
                dtotal += dout[k] * copy[k];
            }
            dcopy[p] += dno_copy;
            scaled = dout.iter().map(|d| d * no_copy).collect::<Vec<_>>();
            &scaled
        }
        None => dout,
    };

    let d_up1 = dbase[1.min(last)];
    let d_zero = dbase[0];
    dtotal += g.reset * (g.incr * d_up1 + (g.decr + g.keep) * d_zero);

    let mut sum_keep = 0.0;
    let mut sum_inc = 0.0;
    let mut sum_dec = 0.0;
    for i in 0..p {
        let hi = h[i];
        let dk = dbase[i];
        let du = dbase[(i + 1).min(last)];
        let dd = dbase[i.saturating_sub(1)];
        dh[i] += wk * dk + wi * du + wd * dd;
        sum_keep += hi * dk;
        sum_inc += hi * du;
        sum_dec += hi * dd;
    }
    for d in dh.iter_mut() {
        *d += dtotal;
    }

    let stay = 1.0 - g.reset;
    dgates.reset += total * (g.incr * d_up1 + (g.decr + g.keep) * d_zero)
        - (g.incr * sum_inc + g.decr * sum_dec + g.keep * sum_keep);
    dgates.incr += total * g.reset * d_up1 + stay * sum_inc;
    dgates.decr += total * g.reset * d_zero + stay * sum_dec;
    dgates.keep += total * g.reset * d_zero + stay * sum_keep;
}

/// Power-sharpening with renormalization into `out`.
///
/// Evaluated relative to the largest entry so that large exponents do not
/// underflow the whole vector. An all-zero input (possible only with
/// `eps = 0`) maps to the uniform distribution.
pub fn sharpen_into(x: &[f64], gamma: f64, eps: f64, out: &mut [f64]) {
    let top = x.iter().fold(0.0_f64, |m, &v| m.max(v)) + eps;
    if top <= 0.0 {
        out.fill(1.0 / x.len() as f64);
        return;
    }
    let mut z = 0.0;
    if gamma == 1.0 {
        for (o, &v) in out.iter_mut().zip(x) {
            *o = v + eps;
            z += *o;
        }
    } else {
        for (o, &v) in out.iter_mut().zip(x) {
            let u = (v + eps) / top;
            *o = if u > 0.0 { u.powf(gamma) } else { 0.0 };
            z += *o;
        }
    }
    let inv = 1.0 / z;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Vector-Jacobian product of [`sharpen_into`].
///
/// `y` is the forward output. Accumulates into `dx` and returns `dL/dgamma`.
pub fn sharpen_vjp(x: &[f64], y: &[f64], dy: &[f64], gamma: f64, eps: f64, dx: &mut [f64]) -> f64 {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    let mut dgamma = 0.0;
    for i in 0..x.len() {
        let base = x[i] + eps;
        if base <= 0.0 {
            continue;
        }
        let gi = y[i] * (dy[i] - dot);
        dx[i] += gamma * gi / base;
        dgamma += gi * base.ln();
    }
    dgamma
}
