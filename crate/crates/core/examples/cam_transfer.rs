//! Localization maps from a trained classifier, fed to the enhanced
//! segmenter. Writes overlay panels of the first few test images.
//!
//! `cargo run --release --example cam_transfer -- [OUT_DIR]`

use std::path::PathBuf;

use mbdcnn::config::PipelineConfig;
use mbdcnn::pipeline::*;
use mbdcnn::report::seg_summary_table;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/cam_transfer"));
    let mut config = PipelineConfig::synthetic_desk();
    config.data.seg_split = [100, 25, 25];
    config.data.cls_split = [100, 25, 25];
    config.optim.max_epochs = 12;
    let data = Datasets::load(&config)?;
    let seg = |name: &str| StageSettings::segmentation(&config, name);

    let coarse = train_coarse(&data.seg_train, &data.seg_val, &config, None, &seg("train_coarse"))?;
    let masks = generate_masks(&coarse.checkpoint, data.all_cls().map(|s| (s.id.as_str(), &s.image)), &config)?;
    let cls = train_classifier(
        &data.cls_train,
        &data.cls_val,
        Some(&masks),
        &config,
        ClassifierInit::Fresh {
            coarse: Some(&coarse.checkpoint),
        },
        &StageSettings::classification(&config, "train_classifier"),
    )?;
    let all: Vec<_> = data.all_seg().cloned().collect();
    let cams = generate_cams(&cls.checkpoint, &coarse.checkpoint, &all, &config)?;
    for s in data.seg_test.iter().take(5) {
        let e = cams.get(&s.id)?;
        let m = &e.channels[0];
        let inside: f32 = m.values().iter().zip(s.mask.values()).filter(|(_, &y)| y == 1).map(|(v, _)| v).sum();
        let mean_in = inside / s.mask.lesion_count().max(1) as f32;
        let mean_all = m.values().iter().sum::<f32>() / m.values().len() as f32;
        println!("{} map from class {}: mean {mean_all:.2} overall, {mean_in:.2} on the lesion", s.id, e.source_classes[0]);
    }
    let enhanced = train_enhanced(
        &data.seg_train,
        &data.seg_val,
        &cams,
        &config,
        EnhancedInit::FromCoarse(&coarse.checkpoint),
        &seg("train_enhanced"),
    )?;
    let c = evaluate_coarse(&coarse.checkpoint, &data.seg_test, &config)?;
    let e = evaluate_enhanced(&enhanced.checkpoint, &data.seg_test, &cams, &config)?;
    print!("{}", seg_summary_table(&[("coarse", &c.mean), ("enhanced", &e.mean)]));

    let panels = overlay_panels(&config, &data.seg_test, &coarse.checkpoint, &enhanced.checkpoint, &cams, 3)?;
    std::fs::create_dir_all(&out)?;
    for p in panels {
        let path = out.join(format!("{}.png", p.id));
        p.render().save(&path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
