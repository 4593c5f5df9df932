//! Pretrains on one synthetic domain and adapts to a shifted one with
//! k-fold fine-tuning.
//!
//! `cargo run --release --example fine_tune`

use mbdcnn::config::PipelineConfig;
use mbdcnn::pipeline::*;

fn main() -> mbdcnn::Result<()> {
    let mut source = PipelineConfig::synthetic_desk();
    source.data.seg_split = [80, 20, 20];
    source.data.cls_split = [80, 20, 20];
    source.optim.max_epochs = 10;
    let pre = run_in_memory(&source, &Datasets::load(&source)?)?;
    let models = Pretrained {
        coarse: pre.coarse.checkpoint,
        classifier: pre.classifier.checkpoint,
        enhanced: pre.enhanced.checkpoint,
    };

    let mut target = source.clone();
    target.seed = 1;
    target.data.synthetic.background_shift = 0.15;
    target.data.seg_split = [24, 8, 8];
    target.data.cls_split = [24, 8, 8];
    target.stages.fine_tune_epochs = 15;
    target.optim.learning_rate = 3e-4;
    let report = fine_tune(&target, &models, &Datasets::load(&target)?, 4)?;
    for f in &report.folds {
        println!(
            "fold {}: enhanced JA {:.4} -> {:.4} ({} test images)",
            f.fold,
            f.zero_shot.enhanced.ja,
            f.fine_tuned.enhanced.ja,
            f.seg_test_ids.len()
        );
    }
    println!("mean: {:.4} -> {:.4}", report.mean_zero_shot_ja, report.mean_fine_tuned_ja);
    Ok(())
}
