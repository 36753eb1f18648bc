//! Compares the filter against exhaustive path enumeration, for a single
//! cursor and for the displacement between two independent cursors.

use prism::histfilter::{update_step, GateProbs, Histogram, SharpenParams};
use prism::oracle::{check_filter_against_oracle, displacement_pmf_bruteforce, displacement_pmf_crosscorr, random_gates};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(gates: &[GateProbs], support: usize) -> prism::Result<Histogram> {
    let mut h = Histogram::one_hot(support, support / 2)?;
    for g in gates {
        h = update_step(&h, g, &SharpenParams::neutral())?;
    }
    Ok(h)
}

fn main() -> prism::Result<()> {
    for steps in [1, 4, 8, 12] {
        let c = check_filter_against_oracle(steps, 7)?;
        println!("{steps:>2} steps, {:>6} paths: max |filter - enumeration| = {:.2e}", c.paths, c.max_abs_error);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (gk, gl) = (random_gates(4, &mut rng), random_gates(5, &mut rng));
    let support = 2 * 9 + 1;
    let (hk, hl) = (run(&gk, support)?, run(&gl, support)?);
    let from_filter = displacement_pmf_crosscorr(&hk, &hl)?;

    // Offsets between the cursors: l's moves plus k's moves reversed.
    let mirrored = gk.iter().map(|g| GateProbs { incr: g.decr, decr: g.incr, ..g.clone() });
    let joint: Vec<GateProbs> = gl.iter().cloned().chain(mirrored).collect();
    let enumerated = displacement_pmf_bruteforce(&joint, false)?;
    println!("\ntwo cursors (4 and 5 steps), D = pos_l - pos_k");
    for d in -4..=5 {
        println!("  D = {d:>2}: filter {:.5}  enumeration {:.5}", from_filter.get(d), enumerated.get(d));
    }
    println!("max difference {:.2e}", from_filter.max_abs_diff(&enumerated));
    Ok(())
}
