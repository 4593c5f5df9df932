//! Generates a small synthetic set and writes it in the on-disk layout
//! that the disk data source reads back.
//!
//! `cargo run --example synthetic_data -- [OUT_DIR]`

use std::path::PathBuf;

use mbdcnn::data::*;

fn main() -> mbdcnn::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/synthetic_data"));
    let config = SyntheticConfig {
        num_seg: 12,
        num_cls: 12,
        seed: 42,
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic_dataset(&config)?;
    for (s, l) in ds.seg.iter().zip(&ds.seg_lesions).take(6) {
        let area = s.mask.lesion_count() as f64 / (s.mask.height() * s.mask.width()) as f64;
        println!(
            "{} class {:<12} centre ({:5.1}, {:5.1}) axes ({:4.1}, {:4.1}) covers {:4.1}%",
            s.id,
            ds.class_names[l.class],
            l.center_x,
            l.center_y,
            l.semi_axis_x,
            l.semi_axis_y,
            100.0 * area
        );
    }
    export_seg_dataset(&out.join("seg"), &ds.seg, &ds.class_names)?;
    export_cls_dataset(&out.join("cls"), &ds.cls, &ds.class_names)?;
    let ids = list_image_ids(&out.join("seg"))?;
    let back = load_seg_dataset(&out.join("seg"), &ids)?;
    println!("wrote and reloaded {} segmentation images under {}", back.len(), out.display());
    Ok(())
}
