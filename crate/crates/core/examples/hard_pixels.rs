//! Which pixels the rank term looks at, and which pairs violate the margin.
//!
//! `cargo run --example hard_pixels`

use mbdcnn::losses::*;

fn main() -> mbdcnn::Result<()> {
    let gt = GroundTruthMask::new(3, 4, vec![0, 0, 1, 1, 0, 1, 1, 0, 0, 0, 1, 0])?;
    let pred = ProbMask::new(3, 4, vec![0.2, 0.7, 0.5, 0.9, 0.1, 0.35, 0.8, 0.6, 0.0, 0.3, 0.55, 0.05])?;
    let k = 3;
    let margin = 0.3;
    let hard = select_hard_pixels(&pred, &gt, k)?;
    println!("hardest background pixels (index: probability)");
    for p in &hard.background {
        println!("  {:2}: {:.2}", p.index, p.value);
    }
    println!("hardest lesion pixels");
    for p in &hard.lesion {
        println!("  {:2}: {:.2}", p.index, p.value);
    }
    println!("\npairs within the margin of {margin}:");
    for b in &hard.background {
        for l in &hard.lesion {
            let hinge = b.value - l.value + margin;
            if hinge > 0.0 {
                println!("  bg {:2} vs lesion {:2}: {hinge:.2}", b.index, l.index);
            }
        }
    }
    println!("\nrank loss {:.4}", rank_loss(&pred, &gt, k, margin)?);
    Ok(())
}
