//! Exhaustive path enumeration for displacement distributions.
//!
//! Exponential in the number of steps and only meant for tests and the
//! `oracle-check` command.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PrismError, Result};
use crate::histfilter::{update_step, GateProbs, Histogram, SharpenParams};

/// Longest gate sequence the enumerator accepts.
pub const MAX_ORACLE_STEPS: usize = 12;

/// One concrete branch: a step in {-1, 0, +1} and a reset flag per time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathSpec {
    pub deltas: Vec<i8>,
    pub resets: Vec<bool>,
}

impl PathSpec {
    pub fn new(deltas: Vec<i8>, resets: Vec<bool>) -> Result<Self> {
        if deltas.len() != resets.len() {
            return Err(PrismError::Dimension(format!(
                "{} deltas vs {} reset flags",
                deltas.len(),
                resets.len()
            )));
        }
        if let Some(d) = deltas.iter().find(|d| !(-1..=1).contains(*d)) {
            return Err(PrismError::Data(format!("step {d} not in {{-1, 0, 1}}")));
        }
        Ok(Self { deltas, resets })
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    /// Net displacement counting only the steps from the last reset onward.
    pub fn displacement(&self) -> i64 {
        let mut surviving = true;
        let mut d = 0i64;
        for t in (0..self.len()).rev() {
            if surviving {
                d += self.deltas[t] as i64;
            }
            if self.resets[t] {
                surviving = false;
            }
        }
        d
    }

    /// Probability of this branch under a gate sequence.
    pub fn weight(&self, gates: &[GateProbs]) -> f64 {
        self.deltas
            .iter()
            .zip(&self.resets)
            .zip(gates)
            .map(|((&d, &r), g)| reset_prob(g, r) * action_prob(g, d))
            .product()
    }
}

fn reset_prob(g: &GateProbs, r: bool) -> f64 {
    if r {
        g.reset
    } else {
        1.0 - g.reset
    }
}

fn action_prob(g: &GateProbs, d: i8) -> f64 {
    match d {
        1 => g.incr,
        -1 => g.decr,
        _ => g.keep,
    }
}

/// Distribution over signed offsets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DisplacementPMF {
    pub probs: BTreeMap<i64, f64>,
}

impl DisplacementPMF {
    pub fn get(&self, d: i64) -> f64 {
        self.probs.get(&d).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    fn add(&mut self, d: i64, p: f64) {
        *self.probs.entry(d).or_insert(0.0) += p;
    }

    /// Largest absolute difference over the union of both supports.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.probs
            .keys()
            .chain(other.probs.keys())
            .map(|&d| (self.get(d) - other.get(d)).abs())
            .fold(0.0, f64::max)
    }
}

/// Sums the weight of every (reset, step) branch by its net displacement.
///
/// Without resets the reset gate is ignored and only the 3^T step sequences
/// are enumerated.
pub fn displacement_pmf_bruteforce(gates: &[GateProbs], with_resets: bool) -> Result<DisplacementPMF> {
    if gates.len() > MAX_ORACLE_STEPS {
        return Err(PrismError::OracleCap { len: gates.len(), cap: MAX_ORACLE_STEPS });
    }
    for g in gates {
        g.validate()?;
    }
    let mut pmf = DisplacementPMF::default();
    let mut path = PathSpec { deltas: Vec::with_capacity(gates.len()), resets: Vec::with_capacity(gates.len()) };
    enumerate(gates, with_resets, 1.0, &mut path, &mut pmf);
    Ok(pmf)
}

fn enumerate(gates: &[GateProbs], with_resets: bool, weight: f64, path: &mut PathSpec, pmf: &mut DisplacementPMF) {
    let t = path.len();
    if t == gates.len() {
        pmf.add(path.displacement(), weight);
        return;
    }
    let g = &gates[t];
    let resets: &[bool] = if with_resets { &[false, true] } else { &[false] };
    for &r in resets {
        let wr = if with_resets { reset_prob(g, r) } else { 1.0 };
        for d in [-1i8, 0, 1] {
            let w = weight * wr * action_prob(g, d);
            if w == 0.0 {
                continue;
            }
            path.deltas.push(d);
            path.resets.push(r);
            enumerate(gates, with_resets, w, path, pmf);
            path.deltas.pop();
            path.resets.pop();
        }
    }
}

/// `Pr(D = d) = sum_i h_k[i] * h_l[i + d]`.
pub fn displacement_pmf_crosscorr(h_k: &Histogram, h_l: &Histogram) -> Result<DisplacementPMF> {
    let p = h_k.support();
    if h_l.support() != p {
        return Err(PrismError::Dimension(format!("supports {p} and {}", h_l.support())));
    }
    let (a, b) = (h_k.mass(), h_l.mass());
    let mut pmf = DisplacementPMF::default();
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            if y != 0.0 {
                pmf.add(j as i64 - i as i64, x * y);
            }
        }
    }
    Ok(pmf)
}

/// Random reset-free gates with all three actions live.
pub fn random_gates(steps: usize, rng: &mut impl Rng) -> Vec<GateProbs> {
    (0..steps)
        .map(|_| {
            let w: [f64; 3] = [rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0)];
            let s: f64 = w.iter().sum();
            GateProbs { reset: 0.0, incr: w[0] / s, decr: w[1] / s, keep: w[2] / s, copy: None }
        })
        .collect()
}

/// Outcome of running the filter against the enumerator.
#[derive(Clone, Debug)]
pub struct OracleCheck {
    pub steps: usize,
    pub seed: u64,
    pub paths: usize,
    pub max_abs_error: f64,
}

/// Iterates the filter with neutral sharpening from a one-hot in the middle
/// of a `2T + 1` support, so neither boundary is reachable, and compares the
/// re-centred marginal with the enumerated distribution.
pub fn check_filter_against_oracle(steps: usize, seed: u64) -> Result<OracleCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gates = random_gates(steps, &mut rng);
    let oracle = displacement_pmf_bruteforce(&gates, false)?;
    let center = steps;
    let start = Histogram::one_hot(2 * steps + 1, center)?;
    let mut h = start.clone();
    for g in &gates {
        h = update_step(&h, g, &SharpenParams::neutral())?;
    }
    let filter = displacement_pmf_crosscorr(&start, &h)?;
    Ok(OracleCheck {
        steps,
        seed,
        paths: 3usize.pow(steps as u32),
        max_abs_error: filter.max_abs_diff(&oracle),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gate(reset: f64, incr: f64, decr: f64, keep: f64) -> GateProbs {
        GateProbs::new(reset, incr, decr, keep).unwrap()
    }

    #[test]
    fn single_certain_increment() {
        let pmf = displacement_pmf_bruteforce(&[gate(0.0, 1.0, 0.0, 0.0)], true).unwrap();
        assert_eq!(pmf.probs.len(), 1);
        assert_eq!(pmf.get(1), 1.0);
    }

    #[test]
    fn zero_reset_probability_matches_reset_free_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gates = random_gates(6, &mut rng);
        let a = displacement_pmf_bruteforce(&gates, true).unwrap();
        let b = displacement_pmf_bruteforce(&gates, false).unwrap();
        assert!(a.max_abs_diff(&b) <= 1e-15);
    }

    #[test]
    fn distribution_is_normalized_with_resets() {
        let gates = vec![gate(0.3, 0.5, 0.2, 0.3), gate(0.7, 0.1, 0.6, 0.3), gate(0.2, 0.4, 0.4, 0.2)];
        let pmf = displacement_pmf_bruteforce(&gates, true).unwrap();
        assert_abs_diff_eq!(pmf.total(), 1.0, epsilon = 1e-12);
        assert!(pmf.probs.values().all(|p| *p >= 0.0));
    }

    #[test]
    fn only_steps_after_the_last_reset_count() {
        let p = PathSpec::new(vec![1, 1, -1, 1], vec![false, true, false, false]).unwrap();
        // The reset fires at t = 1; steps 1..4 survive.
        assert_eq!(p.displacement(), 1);
        let none = PathSpec::new(vec![1, 1, -1, 1], vec![false; 4]).unwrap();
        assert_eq!(none.displacement(), 2);
        let last = PathSpec::new(vec![1, 1, -1, 0], vec![false, false, false, true]).unwrap();
        assert_eq!(last.displacement(), 0);
    }

    #[test]
    fn certain_reset_at_the_end_hides_history() {
        let gates = vec![gate(0.0, 1.0, 0.0, 0.0), gate(0.0, 1.0, 0.0, 0.0), gate(1.0, 0.0, 0.0, 1.0)];
        let pmf = displacement_pmf_bruteforce(&gates, true).unwrap();
        assert_eq!(pmf.get(0), 1.0);
    }

    #[test]
    fn path_spec_rejects_bad_input() {
        assert!(PathSpec::new(vec![1], vec![]).is_err());
        assert!(PathSpec::new(vec![2], vec![false]).is_err());
    }

    #[test]
    fn length_cap_is_enforced() {
        let gates = vec![GateProbs::identity(); MAX_ORACLE_STEPS + 1];
        assert!(matches!(
            displacement_pmf_bruteforce(&gates, false),
            Err(PrismError::OracleCap { len: 13, cap: 12 })
        ));
    }

    #[test]
    fn branch_weights_sum_to_the_enumerated_total() {
        let gates = vec![gate(0.4, 0.5, 0.25, 0.25), gate(0.1, 0.2, 0.3, 0.5)];
        let mut total = 0.0;
        for r0 in [false, true] {
            for r1 in [false, true] {
                for d0 in [-1, 0, 1] {
                    for d1 in [-1, 0, 1] {
                        total += PathSpec::new(vec![d0, d1], vec![r0, r1]).unwrap().weight(&gates);
                    }
                }
            }
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn crosscorr_of_deltas() {
        let a = Histogram::one_hot(10, 2).unwrap();
        let b = Histogram::one_hot(10, 7).unwrap();
        let pmf = displacement_pmf_crosscorr(&a, &b).unwrap();
        assert_eq!(pmf.probs.len(), 1);
        assert_eq!(pmf.get(5), 1.0);
        assert_eq!(displacement_pmf_crosscorr(&b, &a).unwrap().get(-5), 1.0);
    }

    #[test]
    fn crosscorr_of_two_cell_uniforms() {
        let u = Histogram::new(vec![0.5, 0.5], 0).unwrap();
        let pmf = displacement_pmf_crosscorr(&u, &u).unwrap();
        assert_eq!(pmf.get(-1), 0.25);
        assert_eq!(pmf.get(0), 0.5);
        assert_eq!(pmf.get(1), 0.25);
    }

    #[test]
    fn crosscorr_of_random_histograms_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mk = |rng: &mut ChaCha8Rng| {
                let w: Vec<f64> = (0..16).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = w.iter().sum();
                Histogram::new(w.iter().map(|x| x / s).collect(), 0).unwrap()
            };
            let (a, b) = (mk(&mut rng), mk(&mut rng));
            assert_abs_diff_eq!(displacement_pmf_crosscorr(&a, &b).unwrap().total(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn crosscorr_rejects_support_mismatch() {
        let a = Histogram::uniform(4).unwrap();
        let b = Histogram::uniform(5).unwrap();
        assert!(displacement_pmf_crosscorr(&a, &b).is_err());
    }

    #[test]
    fn displacement_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gates = random_gates(4, &mut rng);
        let run = |start: usize| {
            let h0 = Histogram::one_hot(20, start).unwrap();
            let mut h = h0.clone();
            for g in &gates {
                h = update_step(&h, g, &SharpenParams::neutral()).unwrap();
            }
            displacement_pmf_crosscorr(&h0, &h).unwrap()
        };
        assert!(run(8).max_abs_diff(&run(9)) <= 1e-12);
    }

    #[test]
    fn filter_matches_enumeration() {
        for (steps, seed) in [(1, 0), (3, 1), (5, 2), (8, 3)] {
            let check = check_filter_against_oracle(steps, seed).unwrap();
            assert!(check.max_abs_error <= 1e-9, "{check:?}");
        }
    }

    #[test]
    fn filter_from_origin_matches_enumeration_for_forward_only_gates() {
        // Without decrements the left boundary is never touched.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gates: Vec<GateProbs> = (0..6)
            .map(|_| {
                let p: f64 = rng.gen_range(0.1..0.9);
                gate(0.0, p, 0.0, 1.0 - p)
            })
            .collect();
        let oracle = displacement_pmf_bruteforce(&gates, false).unwrap();
        let mut h = Histogram::one_hot(7, 0).unwrap();
        for g in &gates {
            h = update_step(&h, g, &SharpenParams::neutral()).unwrap();
        }
        for (k, &m) in h.mass().iter().enumerate() {
            assert_abs_diff_eq!(m, oracle.get(k as i64), epsilon = 1e-9);
        }
    }
}
