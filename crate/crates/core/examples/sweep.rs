//! Varies the number of hard pixels and tabulates the coarse segmenter's
//! scores.
//!
//! `cargo run --release --example sweep -- [OUT_DIR]`

use std::path::PathBuf;

use mbdcnn::config::PipelineConfig;
use mbdcnn::pipeline::*;
use mbdcnn::report::write_sweep;

fn main() -> mbdcnn::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/sweep"));
    let mut config = PipelineConfig::synthetic_desk();
    config.data.seg_split = [100, 25, 25];
    config.optim.max_epochs = 10;
    let data = Datasets::load(&config)?;
    let table = sweep(&config, &data, SweepParameter::KHard, &[10.0, 30.0, 100.0])?;
    for row in &table.rows {
        match &row.error {
            Some(e) => println!("k_hard {:>5}: failed: {e}", row.value),
            None => println!(
                "k_hard {:>5}: val JA {:.4}, test JA {:.4}",
                row.value, row.metrics["val_ja"], row.metrics["test_ja"]
            ),
        }
    }
    for f in write_sweep(&out, &table)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
