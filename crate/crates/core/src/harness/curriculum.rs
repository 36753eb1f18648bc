use serde::{Deserialize, Serialize};

use crate::error::{PrismError, Result};

/// Maximum training length as a function of the step.
///
/// Lengths up to `warmup_len` for `warmup_steps`, then up to `base_len`
/// for `base_steps`; afterwards, if `grow_every` is set, the limit rises by
/// `grow_by` every `grow_every` steps until `cap`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Curriculum {
    pub min_len: usize,
    pub warmup_len: usize,
    pub warmup_steps: u64,
    pub base_len: usize,
    pub base_steps: u64,
    pub grow_by: usize,
    pub grow_every: Option<u64>,
    pub cap: usize,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self::full().scaled(0.2)
    }
}

impl Curriculum {
    /// Full-length schedule: 5k steps at lengths up to 5, 5k more up to 10.
    pub fn full() -> Self {
        Self {
            min_len: 1,
            warmup_len: 5,
            warmup_steps: 5000,
            base_len: 10,
            base_steps: 5000,
            grow_by: 10,
            grow_every: None,
            cap: 10,
        }
    }

    /// Same shape with every phase length multiplied by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        let s = |n: u64| ((n as f64 * factor).round() as u64).max(1);
        self.warmup_steps = s(self.warmup_steps);
        self.base_steps = s(self.base_steps);
        self.grow_every = self.grow_every.map(s);
        self
    }

    /// A flat schedule: always lengths `min_len..=max_len`.
    pub fn flat(max_len: usize) -> Self {
        Self {
            min_len: 1,
            warmup_len: max_len,
            warmup_steps: 0,
            base_len: max_len,
            base_steps: 0,
            grow_by: 0,
            grow_every: None,
            cap: max_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_len == 0 || self.min_len > self.warmup_len.min(self.base_len) {
            return Err(PrismError::Config("curriculum min_len must be in 1..=warmup_len".into()));
        }
        if self.warmup_len > self.base_len || self.base_len > self.cap {
            return Err(PrismError::Config("curriculum lengths must be non-decreasing up to the cap".into()));
        }
        if self.grow_every == Some(0) {
            return Err(PrismError::Config("grow_every must be positive".into()));
        }
        Ok(())
    }

    pub fn max_len_at(&self, step: u64) -> usize {
        if step < self.warmup_steps {
            return self.warmup_len;
        }
        let after = step - self.warmup_steps;
        if after < self.base_steps {
            return self.base_len;
        }
        match self.grow_every {
            Some(every) => {
                let grown = ((after - self.base_steps) / every + 1) as usize * self.grow_by;
                (self.base_len + grown).min(self.cap)
            }
            None => self.base_len,
        }
    }

    /// Largest length ever trained on.
    pub fn final_max_len(&self) -> usize {
        if self.grow_every.is_some() && self.grow_by > 0 {
            self.cap
        } else {
            self.base_len
        }
    }
}
