//! Trains the coarse segmenter on synthetic lesions and scores it.
//!
//! `cargo run --release --example coarse_segmentation -- [EPOCHS]`

use mbdcnn::config::PipelineConfig;
use mbdcnn::pipeline::*;
use mbdcnn::report::seg_summary_table;

fn main() -> mbdcnn::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(15);
    let mut config = PipelineConfig::synthetic_desk();
    config.data.seg_split = [120, 30, 30];
    let data = Datasets::load(&config)?;
    let settings = StageSettings::segmentation(&config, Stage::TrainCoarse.name()).with_max_epochs(epochs);
    let outcome = train_coarse(&data.seg_train, &data.seg_val, &config, None, &settings)?;
    for r in &outcome.curve {
        println!("epoch {:3}  loss {:.4}  val JA {:.4}", r.epoch, r.train_loss, r.val_metric);
    }
    println!("best epoch {}", outcome.best_epoch());
    let test = evaluate_coarse(&outcome.checkpoint, &data.seg_test, &config)?;
    print!("{}", seg_summary_table(&[("coarse (test)", &test.mean)]));
    Ok(())
}
