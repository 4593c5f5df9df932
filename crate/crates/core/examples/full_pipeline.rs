//! All five stages into a resumable run directory, then the reports.
//! Running it again picks up where the previous run stopped.
//!
//! `cargo run --release --example full_pipeline -- [OUT_DIR]`

use std::path::PathBuf;

use mbdcnn::config::PipelineConfig;
use mbdcnn::pipeline::*;
use mbdcnn::report;

fn main() -> mbdcnn::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/full_pipeline"));
    let mut config = PipelineConfig::synthetic_desk();
    config.optim.max_epochs = 20;
    let mut p = Pipeline::open(config, &out)?;
    for stage in Stage::ALL {
        if p.state.is_complete(stage) {
            println!("{stage}: already complete");
            continue;
        }
        p.run_stage(stage)?;
        let r = p.state.record(stage);
        match (r.best_epoch, r.best_metric, r.items) {
            (Some(e), Some(m), _) => println!("{stage}: best epoch {e}, validation {m:.4}"),
            (_, _, Some(n)) => println!("{stage}: {n} maps"),
            _ => println!("{stage}: done"),
        }
    }
    let reports = p.final_reports()?;
    let overlays = p.overlay_panels(p.config.eval.overlay_samples)?;
    report::emit_run_report(&out.join("reports"), &reports, &p.data.class_names, &p.curves()?, &overlays)?;
    print!(
        "{}",
        report::seg_summary_table(&[("coarse", &reports.coarse.mean), ("enhanced", &reports.enhanced.mean)])
    );
    print!("{}", report::cls_summary_table(&reports.classifier, &p.data.class_names));
    println!("reports in {}", out.join("reports").display());
    Ok(())
}
