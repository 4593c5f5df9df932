//! Trains the classifier with and without the coarse mask as a fourth input
//! channel.
//!
//! `cargo run --release --example mask_classifier`

use mbdcnn::config::PipelineConfig;
use mbdcnn::pipeline::*;
use mbdcnn::report::cls_summary_table;

fn main() -> mbdcnn::Result<()> {
    let mut config = PipelineConfig::synthetic_desk();
    config.data.seg_split = [100, 25, 25];
    config.data.cls_split = [120, 30, 30];
    config.optim.max_epochs = 12;
    let data = Datasets::load(&config)?;
    let coarse = train_coarse(
        &data.seg_train,
        &data.seg_val,
        &config,
        None,
        &StageSettings::segmentation(&config, Stage::TrainCoarse.name()),
    )?;
    let masks = generate_masks(&coarse.checkpoint, data.all_cls().map(|s| (s.id.as_str(), &s.image)), &config)?;
    for no_mask in [false, true] {
        let mut c = config.clone();
        c.stages.no_mask = no_mask;
        let o = train_classifier(
            &data.cls_train,
            &data.cls_val,
            Some(&masks),
            &c,
            ClassifierInit::Fresh {
                coarse: Some(&coarse.checkpoint),
            },
            &StageSettings::classification(&c, Stage::TrainClassifier.name()),
        )?;
        let r = evaluate_classifier(&o.checkpoint, &data.cls_test, Some(&masks), &c)?;
        println!(
            "\n{} (best val accuracy {:.3} at epoch {})",
            if no_mask { "image only" } else { "image + coarse mask" },
            o.best_metric(),
            o.best_epoch()
        );
        print!("{}", cls_summary_table(&r, &data.class_names));
    }
    Ok(())
}
