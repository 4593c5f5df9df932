//! Report files: per-image and summary tables, training curves, metric plots
//! and qualitative overlay panels.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::losses::GroundTruthMask;
use crate::metrics::{ClsReport, ConfusionCounts, SegImageRow, SegReport, SegScores};
use crate::pipeline::{EpochRecord, FinalReports, FineTuneReport, LossTable, SweepTable};
use crate::tensor::Grid;

pub const SEG_HEADER: [&str; 10] = ["id", "ja", "di", "ac", "se", "sp", "tp", "fp", "tn", "fn"];
pub const SUMMARY_ID: &str = "mean";
pub const POOLED_ID: &str = "pooled";
pub const FINAL_REPORTS_FILE: &str = "final_reports.json";

/// Reloads the reports written by [`emit_run_report`].
pub fn read_final_reports(dir: &Path) -> Result<FinalReports> {
    crate::checkpoint::read_json(&dir.join(FINAL_REPORTS_FILE))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    ensure_parent(path)?;
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format("table", format!("{}: {other:?}", path.display())),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn scores_fields(s: &SegScores) -> [String; 5] {
    [s.ja, s.di, s.ac, s.se, s.sp].map(|v| v.to_string())
}

/// One row per image, then a `mean` row and a `pooled` row (scores of the
/// summed counts); header only when there are no images.
pub fn write_seg_report(path: &Path, report: &SegReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| csv_error(path, e);
    w.write_record(SEG_HEADER).map_err(err)?;
    for r in &report.rows {
        let c = &r.counts;
        let mut rec = vec![r.id.clone()];
        rec.extend(scores_fields(&r.scores));
        rec.extend([c.tp, c.fp, c.tn, c.fn_].map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    if !report.rows.is_empty() {
        for (id, scores) in [(SUMMARY_ID, &report.mean), (POOLED_ID, &report.pooled)] {
            let mut rec = vec![id.to_string()];
            rec.extend(scores_fields(scores));
            rec.extend(["", "", "", ""].map(String::from));
            w.write_record(&rec).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rebuilds a report from its per-image rows.
pub fn read_seg_report(path: &Path) -> Result<SegReport> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let bad = |m: String| Error::format("segmentation report", format!("{}: {m}", path.display()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != SEG_HEADER.len() {
            return Err(bad(format!("row has {} fields", rec.len())));
        }
        if (&rec[0] == SUMMARY_ID || &rec[0] == POOLED_ID) && rec[6].is_empty() {
            continue;
        }
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(format!("{}: {e}", SEG_HEADER[i])));
        let n = |i: usize| rec[i].parse::<u64>().map_err(|e| bad(format!("{}: {e}", SEG_HEADER[i])));
        rows.push(SegImageRow {
            id: rec[0].to_string(),
            counts: ConfusionCounts {
                tp: n(6)?,
                fp: n(7)?,
                tn: n(8)?,
                fn_: n(9)?,
            },
            scores: SegScores {
                ja: f(1)?,
                di: f(2)?,
                ac: f(3)?,
                se: f(4)?,
                sp: f(5)?,
            },
        });
    }
    Ok(SegReport::from_rows(rows))
}

pub fn write_cls_report(path: &Path, report: &ClsReport, class_names: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| csv_error(path, e);
    w.write_record(["task", "positive_class", "ac", "se", "sp", "auc"]).map_err(err)?;
    for t in &report.tasks {
        let name = class_names.get(t.positive_class).cloned().unwrap_or_else(|| t.positive_class.to_string());
        w.write_record([
            format!("{name}_vs_rest"),
            t.positive_class.to_string(),
            t.ac.to_string(),
            t.se.to_string(),
            t.sp.to_string(),
            t.auc.to_string(),
        ])
        .map_err(err)?;
    }
    w.write_record(["average", "", "", "", "", &report.average_auc.to_string()]).map_err(err)?;
    w.write_record(["multiclass_accuracy", "", &report.accuracy.to_string(), "", "", ""]).map_err(err)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_curve(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in curve {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    if curve.is_empty() {
        w.write_record(["epoch", "train_loss", "val_metric"]).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curve(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|rec| rec.map_err(|e| csv_error(path, e))).collect()
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// Segmentation rows (JA, DI, AC, SE, SP) in percent.
pub fn seg_summary_table(rows: &[(&str, &SegScores)]) -> String {
    let mut s = format!("{:<24}{:>8}{:>8}{:>8}{:>8}{:>8}\n", "method", "JA", "DI", "AC", "SE", "SP");
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<24}{:>8}{:>8}{:>8}{:>8}{:>8}",
            name,
            pct(r.ja),
            pct(r.di),
            pct(r.ac),
            pct(r.se),
            pct(r.sp)
        );
    }
    s
}

/// Classification rows (AC, SE, SP, AUC) in percent.
pub fn cls_summary_table(report: &ClsReport, class_names: &[String]) -> String {
    let mut s = format!("{:<28}{:>8}{:>8}{:>8}{:>8}\n", "task", "AC", "SE", "SP", "AUC");
    for t in &report.tasks {
        let name = class_names.get(t.positive_class).cloned().unwrap_or_else(|| t.positive_class.to_string());
        let _ = writeln!(
            s,
            "{:<28}{:>8}{:>8}{:>8}{:>8}",
            format!("{name} vs rest"),
            pct(t.ac),
            pct(t.se),
            pct(t.sp),
            pct(t.auc)
        );
    }
    let _ = writeln!(s, "{:<28}{:>8}{:>8}{:>8}{:>8}", "average", "", "", "", pct(report.average_auc));
    let _ = writeln!(s, "multi-class accuracy: {}", pct(report.accuracy));
    s
}

/// Writes every table of a finished run under `dir` and returns the paths.
pub fn emit_run_report(
    dir: &Path,
    reports: &FinalReports,
    class_names: &[String],
    curves: &[(String, Vec<EpochRecord>)],
    overlays: &[OverlayPanel],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |p: PathBuf| {
        written.push(p.clone());
        p
    };
    write_seg_report(&put(dir.join("coarse_per_image.csv")), &reports.coarse)?;
    write_seg_report(&put(dir.join("enhanced_per_image.csv")), &reports.enhanced)?;
    write_cls_report(&put(dir.join("classification.csv")), &reports.classifier, class_names)?;
    let mut text = String::from("Segmentation (test split, mean of per-image scores)\n");
    text += &seg_summary_table(&[("coarse", &reports.coarse.mean), ("enhanced", &reports.enhanced.mean)]);
    text += "\nSegmentation (pooled pixel counts)\n";
    text += &seg_summary_table(&[("coarse", &reports.coarse.pooled), ("enhanced", &reports.enhanced.pooled)]);
    text += "\nClassification (test split)\n";
    text += &cls_summary_table(&reports.classifier, class_names);
    write_text(&put(dir.join("summary.txt")), &text)?;
    crate::checkpoint::write_json(&put(dir.join(FINAL_REPORTS_FILE)), reports)?;
    for (name, curve) in curves {
        let loss: Vec<(f64, f64)> = curve.iter().map(|r| (r.epoch as f64, r.train_loss)).collect();
        let metric: Vec<(f64, f64)> = curve.iter().map(|r| (r.epoch as f64, r.val_metric)).collect();
        line_plot(&put(dir.join(format!("curve_{name}.png"))), &[loss, metric])?;
    }
    for p in overlays {
        let path = put(dir.join("overlays").join(format!("overlay_{}.png", sanitize(&p.id))));
        ensure_parent(&path)?;
        p.render().save(&path).map_err(|e| Error::Image { path, source: e })?;
    }
    Ok(written)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn write_sweep(dir: &Path, table: &SweepTable) -> Result<Vec<PathBuf>> {
    let name = table.parameter.name();
    let csv_path = dir.join(format!("sweep_{name}.csv"));
    let mut w = csv_writer(&csv_path)?;
    let err = |e| csv_error(&csv_path, e);
    let mut header = vec![name.to_string()];
    header.extend(table.metric_names.iter().cloned());
    header.push("error".into());
    w.write_record(&header).map_err(err)?;
    for r in &table.rows {
        let mut rec = vec![r.value.to_string()];
        rec.extend(table.metric_names.iter().map(|m| r.metrics.get(m).map(|v| v.to_string()).unwrap_or_default()));
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let series: Vec<Vec<(f64, f64)>> = table
        .metric_names
        .iter()
        .map(|m| table.rows.iter().filter_map(|r| r.metrics.get(m).map(|&v| (r.value, v))).collect())
        .collect();
    let png = dir.join(format!("sweep_{name}.png"));
    line_plot(&png, &series)?;
    Ok(vec![csv_path, png])
}

pub fn write_loss_table(dir: &Path, table: &LossTable) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join("loss_comparison.csv");
    let mut w = csv_writer(&csv_path)?;
    let err = |e| csv_error(&csv_path, e);
    w.write_record(["loss", "ja", "di", "ac", "se", "sp", "val_ja", "error"]).map_err(err)?;
    let mut text_rows = Vec::new();
    for r in &table.rows {
        let mut rec = vec![r.loss.clone()];
        match &r.scores {
            Some(s) => {
                rec.extend(scores_fields(s));
                text_rows.push((r.loss.as_str(), s));
            }
            None => rec.extend(std::iter::repeat(String::new()).take(5)),
        }
        rec.push(r.val_ja.map(|v| v.to_string()).unwrap_or_default());
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let txt = dir.join("loss_comparison.txt");
    write_text(&txt, &seg_summary_table(&text_rows))?;
    Ok(vec![csv_path, txt])
}

pub fn write_fine_tune(dir: &Path, report: &FineTuneReport) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join("fine_tune.csv");
    let mut w = csv_writer(&csv_path)?;
    let err = |e| csv_error(&csv_path, e);
    w.write_record([
        "fold",
        "zero_shot_coarse_ja",
        "zero_shot_enhanced_ja",
        "fine_tuned_coarse_ja",
        "fine_tuned_enhanced_ja",
        "zero_shot_average_auc",
        "fine_tuned_average_auc",
    ])
    .map_err(err)?;
    let auc = |s: &crate::pipeline::FoldScores| s.classifier.as_ref().map(|c| c.average_auc.to_string()).unwrap_or_default();
    for f in &report.folds {
        w.write_record([
            f.fold.to_string(),
            f.zero_shot.coarse.ja.to_string(),
            f.zero_shot.enhanced.ja.to_string(),
            f.fine_tuned.coarse.ja.to_string(),
            f.fine_tuned.enhanced.ja.to_string(),
            auc(&f.zero_shot),
            auc(&f.fine_tuned),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let mut text = String::new();
    for f in &report.folds {
        text += &format!("fold {}\n", f.fold);
        text += &seg_summary_table(&[("zero-shot", &f.zero_shot.enhanced), ("fine-tuned", &f.fine_tuned.enhanced)]);
    }
    let _ = writeln!(
        text,
        "\nmean enhanced JA: zero-shot {}, fine-tuned {}",
        pct(report.mean_zero_shot_ja),
        pct(report.mean_fine_tuned_ja)
    );
    let txt = dir.join("fine_tune.txt");
    write_text(&txt, &text)?;
    Ok(vec![csv_path, txt])
}

const PALETTE: [[u8; 3]; 6] = [
    [31, 119, 180],
    [214, 39, 40],
    [44, 160, 44],
    [148, 103, 189],
    [255, 127, 14],
    [23, 190, 207],
];

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        for (dx, dy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x.round() as i64 + dx, y.round() as i64 + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

/// Renders each series as a polyline with square markers on shared axes.
pub fn line_plot(path: &Path, series: &[Vec<(f64, f64)>]) -> Result<()> {
    let (w, h, m) = (480u32, 320u32, 24.0);
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let pts: Vec<(f64, f64)> = series.iter().flatten().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if pts.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (pw, ph) = (w as f64 - 2.0 * m, h as f64 - 2.0 * m);
    let to_px = |x: f64, y: f64| (m + (x - x0) / (x1 - x0) * pw, m + (1.0 - (y - y0) / (y1 - y0)) * ph);
    let grid = Rgb([225, 225, 225]);
    for i in 1..4 {
        let f = i as f64 / 4.0;
        draw_line(&mut img, (m, m + f * ph), (m + pw, m + f * ph), grid);
        draw_line(&mut img, (m + f * pw, m), (m + f * pw, m + ph), grid);
    }
    let axis = Rgb([0, 0, 0]);
    draw_line(&mut img, (m, m + ph), (m + pw, m + ph), axis);
    draw_line(&mut img, (m, m), (m, m + ph), axis);
    for (k, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        let p: Vec<(f64, f64)> = s.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&(x, y)| to_px(x, y)).collect();
        for pair in p.windows(2) {
            draw_line(&mut img, pair[0], pair[1], color);
        }
        for &(x, y) in &p {
            draw_line(&mut img, (x - 2.0, y - 2.0), (x + 2.0, y - 2.0), color);
            draw_line(&mut img, (x - 2.0, y + 2.0), (x + 2.0, y + 2.0), color);
            draw_line(&mut img, (x - 2.0, y - 2.0), (x - 2.0, y + 2.0), color);
            draw_line(&mut img, (x + 2.0, y - 2.0), (x + 2.0, y + 2.0), color);
        }
    }
    ensure_parent(path)?;
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// One qualitative row: image, coarse mask, localization map, enhanced
/// prediction and ground truth, all at the same resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayPanel {
    pub id: String,
    pub image: Image,
    pub coarse: Grid<f32>,
    pub cam: Grid<f32>,
    pub enhanced: Grid<f32>,
    pub truth: GroundTruthMask,
}

fn jet(v: f32) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let c = |x: f32| (255.0 * (1.5 - (4.0 * v - x).abs()).clamp(0.0, 1.0)) as u8;
    [c(3.0), c(2.0), c(1.0)]
}

impl OverlayPanel {
    pub const TILES: u32 = 5;

    pub fn render(&self) -> RgbImage {
        let (h, w) = (self.image.height() as u32, self.image.width() as u32);
        let scale = (128 / h.max(w)).max(1);
        let (th, tw, gap) = (h * scale, w * scale, 4u32);
        let mut out = RgbImage::from_pixel(Self::TILES * tw + (Self::TILES - 1) * gap, th, Rgb([128, 128, 128]));
        let gray = |g: f32| {
            let v = (g.clamp(0.0, 1.0) * 255.0).round() as u8;
            [v, v, v]
        };
        let ch = self.image.channels();
        for y in 0..th {
            for x in 0..tw {
                let (r, c) = ((y / scale) as usize, (x / scale) as usize);
                let i = r * w as usize + c;
                let rgb = |k: usize| (self.image.plane(k.min(ch - 1))[i].clamp(0.0, 1.0) * 255.0).round() as u8;
                let tiles = [
                    [rgb(0), rgb(1), rgb(2)],
                    gray(self.coarse.get(r, c)),
                    jet(self.cam.get(r, c)),
                    gray(self.enhanced.get(r, c)),
                    gray(self.truth.grid().get(r, c) as f32),
                ];
                for (t, px) in tiles.into_iter().enumerate() {
                    out.put_pixel(t as u32 * (tw + gap) + x, y, Rgb(px));
                }
            }
        }
        out
    }
}
