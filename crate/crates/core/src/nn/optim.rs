//! AdamW with per-group hyperparameters.

use serde::{Deserialize, Serialize};

use super::graph::{ParamGroup, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub main: GroupHyper,
    pub no_decay: GroupHyper,
    pub alpha: GroupHyper,
}

impl OptimConfig {
    /// Main lr `lr`; position coefficients on their own faster schedule.
    pub fn with_lr(lr: f64) -> Self {
        let main = GroupHyper { lr, beta1: 0.9, beta2: 0.98, eps: 1e-8, weight_decay: 0.01 };
        Self {
            main,
            no_decay: GroupHyper { weight_decay: 0.0, ..main },
            alpha: GroupHyper { lr: 0.03, beta1: 0.8, beta2: 0.92, eps: 1e-8, weight_decay: 0.0 },
        }
    }

    pub fn group(&self, g: ParamGroup) -> &GroupHyper {
        match g {
            ParamGroup::Main => &self.main,
            ParamGroup::NoDecay => &self.no_decay,
            ParamGroup::Alpha => &self.alpha,
        }
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self::with_lr(1e-3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: OptimConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: OptimConfig, params: &ParamStore) -> Self {
        let zeros = || params.entries.iter().map(|e| vec![0.0; e.value.numel()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One update. `lr_scale` multiplies every group's learning rate
    /// (warmup); decay is decoupled and scaled with it.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr_scale: f64) {
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let t = self.step as f64;
        for (i, entry) in params.entries.iter_mut().enumerate() {
            let h = *self.config.group(entry.group);
            let lr = h.lr * lr_scale;
            let bc1 = 1.0 - h.beta1.powf(t);
            let bc2 = 1.0 - h.beta2.powf(t);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, g), mi), vi) in entry.value.data.iter_mut().zip(&grads[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = h.beta1 * *mi + (1.0 - h.beta1) * g;
                *vi = h.beta2 * *vi + (1.0 - h.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * (mhat / (vhat.sqrt() + h.eps) + h.weight_decay * *w);
            }
        }
    }
}

/// Linear warmup over the first `warmup` steps, then constant.
pub fn lr_scale(step: u64, warmup: u64) -> f64 {
    if warmup == 0 {
        1.0
    } else {
        ((step + 1) as f64 / warmup as f64).min(1.0)
    }
}
