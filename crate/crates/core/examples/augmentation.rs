//! One random draw applied to an image, its mask and a lower-resolution map.
//!
//! `cargo run --example augmentation`

use mbdcnn::data::*;
use mbdcnn::tensor::Grid;

fn main() -> mbdcnn::Result<()> {
    let ds = generate_synthetic_dataset(&SyntheticConfig {
        num_seg: 1,
        num_cls: 0,
        ..SyntheticConfig::default()
    })?;
    let sample = &ds.seg[0];
    let config = AugmentationConfig {
        target_size: [48, 48],
        ..AugmentationConfig::default()
    };
    let soft = Grid::new(64, 64, sample.mask.values().iter().map(|&v| v as f32).collect())?;
    let half = resize_grid(&soft, 32, 32);
    for epoch in 0..4 {
        let mut rng = augment_rng(7, &sample.id, epoch);
        let params = draw_params(&config, &mut rng);
        let w = apply_params(&sample.image, &[half.clone()], Some(&sample.mask), &params, config.target_size);
        let mask = w.mask.expect("mask given");
        let agree = mask
            .values()
            .iter()
            .zip(w.aux[0].values())
            .filter(|(m, a)| (**m == 1) == (**a >= 0.5))
            .count();
        println!(
            "epoch {epoch}: rot {:+5.1} deg, crop {:.2}, shift ({:+.1}, {:+.1}), flips {}/{}, lesion {:3} px, map agrees on {:.1}%",
            params.rotation_radians.to_degrees(),
            params.crop_scale,
            params.shift_x,
            params.shift_y,
            params.horizontal_flip as u8,
            params.vertical_flip as u8,
            mask.lesion_count(),
            100.0 * agree as f64 / mask.values().len() as f64
        );
    }
    Ok(())
}
