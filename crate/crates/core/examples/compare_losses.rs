//! Trains the coarse segmenter once per loss on the same data and seed.
//!
//! `cargo run --release --example compare_losses`

use mbdcnn::config::{LossKind, PipelineConfig};
use mbdcnn::pipeline::*;
use mbdcnn::report::seg_summary_table;

fn main() -> mbdcnn::Result<()> {
    let mut config = PipelineConfig::synthetic_desk();
    config.data.seg_split = [100, 25, 25];
    config.optim.max_epochs = 12;
    let data = Datasets::load(&config)?;
    let table = compare_losses(
        &config,
        &data,
        &[LossKind::Wce, LossKind::Dice, LossKind::Focal, LossKind::Hybrid],
    )?;
    let rows: Vec<_> = table
        .rows
        .iter()
        .filter_map(|r| r.scores.as_ref().map(|s| (r.loss.as_str(), s)))
        .collect();
    print!("{}", seg_summary_table(&rows));
    for r in table.rows.iter().filter(|r| r.error.is_some()) {
        println!("{} failed: {}", r.loss, r.error.as_deref().unwrap_or(""));
    }
    Ok(())
}
