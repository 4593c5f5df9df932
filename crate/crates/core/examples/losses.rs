//! Segmentation losses on a small hand-made prediction.
//!
//! `cargo run --example losses`

use mbdcnn::losses::*;

fn main() -> mbdcnn::Result<()> {
    // 4x4 truth with a 2x2 lesion in the middle.
    let gt = GroundTruthMask::new(4, 4, vec![0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0])?;
    let pred = ProbMask::new(
        4,
        4,
        vec![0.1, 0.2, 0.1, 0.0, 0.3, 0.9, 0.6, 0.4, 0.1, 0.45, 0.8, 0.2, 0.0, 0.1, 0.2, 0.1],
    )?;
    let params = HybridLossParams {
        k_hard: 3,
        ..HybridLossParams::default()
    };
    let weights = ClassWeights {
        lesion: 2.0,
        background: 1.0,
    };
    println!("dice            {:.5}", dice_loss(&pred, &gt, params.epsilon)?);
    println!("rank (K=3)      {:.5}", rank_loss(&pred, &gt, params.k_hard, params.margin)?);
    println!("hybrid          {:.5}", hybrid_loss(&pred, &gt, &params)?);
    println!("cross-entropy   {:.5}", cross_entropy_loss(&pred, &gt)?);
    println!("weighted CE     {:.5}", weighted_cross_entropy_loss(&pred, &gt, weights)?);
    println!("focal (g=2)     {:.5}", focal_loss(&pred, &gt, 2.0, 1.0)?);

    let g = hybrid_loss_grad(&pred, &gt, &params)?;
    println!("\nhybrid gradient:");
    for row in g.grad.chunks(4) {
        println!("  {}", row.iter().map(|v| format!("{v:+.4}")).collect::<Vec<_>>().join(" "));
    }
    Ok(())
}
