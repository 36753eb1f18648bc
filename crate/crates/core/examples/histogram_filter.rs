//! Steps a single cursor through hand-picked gates and prints the histogram
//! after each update.

use prism::histfilter::{update_step, GateProbs, Histogram, SharpenParams};

fn show(label: &str, h: &Histogram) {
    let bars: String = h.mass().iter().map(|&p| match (p * 10.0) as u32 { 0 => '.', 1..=3 => ':', 4..=6 => '+', _ => '#' }).collect();
    println!("{label:<22} {bars}  mode {}", h.mode());
}

fn main() -> prism::Result<()> {
    let sharp = SharpenParams::new(2.0, 1e-9)?;
    let mut h = Histogram::one_hot(16, 0)?;
    show("start", &h);

    // Mostly-increment gates: the mass drifts right and spreads.
    let drift = GateProbs::new(0.0, 0.8, 0.05, 0.15)?;
    for t in 1..=6 {
        h = update_step(&h, &drift, &SharpenParams::neutral())?;
        show(&format!("incr step {t}"), &h);
    }
    // Sharpening pulls the spread back towards the mode.
    for t in 1..=2 {
        h = update_step(&h, &GateProbs::identity(), &sharp)?;
        show(&format!("sharpen {t}"), &h);
    }
    // A certain reset followed by an increment lands on index 1.
    h = update_step(&h, &GateProbs::new(1.0, 1.0, 0.0, 0.0)?, &sharp)?;
    show("reset + incr", &h);

    // Copy: jump to a distribution supplied by another position.
    let mut target = vec![0.0; 16];
    target[9] = 1.0;
    let copy = GateProbs::new(0.0, 0.0, 0.0, 1.0)?.with_copy([target, vec![0.0]].concat())?;
    h = update_step(&h, &copy, &sharp)?;
    show("copy to 9", &h);
    Ok(())
}
