use approx::assert_abs_diff_eq;
use prism::histfilter::{apply_transition_matrix, update_step, GateProbs, Histogram, SharpenParams};
use prism::oracle::displacement_pmf_crosscorr;
use prism::tasks::{Task, Tokenizer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn histogram(max_p: usize) -> impl Strategy<Value = Histogram> {
    (1..max_p).prop_flat_map(sized)
}

fn sized(p: usize) -> impl Strategy<Value = Histogram> {
    prop::collection::vec(0.0f64..1.0, p).prop_filter_map("all zero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| Histogram::new(w.iter().map(|x| x / s).collect(), 0).unwrap())
    })
}

fn gates() -> impl Strategy<Value = GateProbs> {
    (0.0f64..1.0, 0.01f64..1.0, 0.01f64..1.0, 0.01f64..1.0).prop_map(|(r, i, d, k)| {
        let s = i + d + k;
        GateProbs::new(r, i / s, d / s, k / s).unwrap()
    })
}

proptest! {
    #[test]
    fn updates_stay_normalized(h in histogram(40), g in gates(), gamma in 1.0f64..4.0) {
        let out = update_step(&h, &g, &SharpenParams::new(gamma, 1e-9).unwrap()).unwrap();
        assert_abs_diff_eq!(out.mass().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        prop_assert!(out.mass().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn unsharpened_update_is_the_dense_product(h in histogram(30), g in gates()) {
        let a = update_step(&h, &g, &SharpenParams::neutral()).unwrap();
        let b = apply_transition_matrix(&h, &g).unwrap();
        for (x, y) in a.mass().iter().zip(b.mass()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn certain_reset_forgets_the_past(h in histogram(30), incr in 0.0f64..1.0) {
        let g = GateProbs::new(1.0, incr, 0.0, 1.0 - incr).unwrap();
        let out = update_step(&h, &g, &SharpenParams::neutral()).unwrap();
        let fresh = update_step(&Histogram::one_hot(h.support(), 0).unwrap(), &g, &SharpenParams::neutral()).unwrap();
        for (x, y) in out.mass().iter().zip(fresh.mass()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn displacement_pmf_is_a_distribution_and_antisymmetric((a, b) in (1usize..20).prop_flat_map(|p| (sized(p), sized(p)))) {
        let ab = displacement_pmf_crosscorr(&a, &b).unwrap();
        let ba = displacement_pmf_crosscorr(&b, &a).unwrap();
        assert_abs_diff_eq!(ab.total(), 1.0, epsilon = 1e-9);
        for (&d, &p) in &ab.probs {
            assert_abs_diff_eq!(p, ba.get(-d), epsilon = 1e-12);
        }
    }

    #[test]
    fn generated_text_round_trips_through_the_tokenizer(seed in any::<u64>(), len in 1usize..25, t in 0usize..7) {
        let task = Task::ALL.into_iter().filter(|t| t.is_synthetic()).nth(t).unwrap();
        let ex = task.sample(len, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let tok = Tokenizer::get();
        prop_assert_eq!(tok.decode(&ex.tokens, task.style()).unwrap(), ex.text.clone());
        prop_assert_eq!(tok.encode(&ex.text).unwrap(), ex.tokens.clone());
    }
}
