//! Turns cursor histograms into sinusoid position streams and scores query
//! and key pairs. Sharp histograms give a score that falls with the offset;
//! blurred ones flatten the profile.

use prism::attn_scores::{hybrid_scores, position_scores, ScoreParams, ScoreTensor};
use prism::posenc::{build_sin_table, superpose, HistogramBlock};

const P: usize = 64;
const OFFSETS: [usize; 6] = [0, 1, 2, 4, 8, 16];

fn profile(blur: f64) -> prism::Result<ScoreTensor> {
    let table = build_sin_table(P, 32)?;
    let seq = OFFSETS.len();
    let (mut q, mut k) = (HistogramBlock::zeros(1, 1, seq, P), HistogramBlock::zeros(1, 1, seq, P));
    let spread = |row: &mut [f64], centre: usize| {
        let w: Vec<f64> = (0..P).map(|i| (-((i as f64 - centre as f64).powi(2)) / (2.0 * blur * blur + 1e-12)).exp()).collect();
        let z: f64 = w.iter().sum();
        row.iter_mut().zip(&w).for_each(|(r, x)| *r = x / z);
    };
    for (t, off) in OFFSETS.iter().enumerate() {
        spread(q.at_mut(0, 0, t), 40);
        spread(k.at_mut(0, 0, t), 40 - off);
    }
    let (eq, ek) = (superpose(&q, 1, &table)?, superpose(&k, 1, &table)?);
    position_scores(&eq, &ek, &ScoreParams::new(1, 1, 1.0, 0.0))
}

fn main() -> prism::Result<()> {
    println!("offset  {}", OFFSETS.map(|o| format!("{o:>7}")).join(""));
    for blur in [0.0, 1.0, 3.0] {
        let s = profile(blur)?;
        let row: String = (0..OFFSETS.len()).map(|j| format!("{:>7.3}", s.at(0, 0, 0, j))).collect();
        println!("blur {blur:<3}{row}");
    }

    // Hybrid mixing with a content score of 1 everywhere.
    let pos = profile(0.0)?;
    let content = ScoreTensor { data: vec![1.0; pos.data.len()], ..pos.clone() };
    for mu in [0.0, 0.5, 1.0] {
        let mix = hybrid_scores(&content, &pos, &ScoreParams::new(1, 1, 1.0, mu))?;
        let row: String = (0..OFFSETS.len()).map(|j| format!("{:>7.3}", mix.at(0, 0, 0, j))).collect();
        println!("mu {mu:<5}{row}");
    }
    Ok(())
}
