//! Shared brute-force oracles and fixtures for the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mbdcnn::config::PipelineConfig;
use mbdcnn::losses::{GroundTruthMask, HardPixel, HardPixelSet, ProbMask};
use mbdcnn::metrics::ConfusionCounts;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn prob_mask(rng: &mut impl Rng, h: usize, w: usize, lo: f64, hi: f64) -> ProbMask {
    let v = (0..h * w).map(|_| rng.gen_range(lo..hi)).collect();
    ProbMask::new(h, w, v).unwrap()
}

/// Probabilities drawn from a coarse grid so that ties are common.
pub fn quantized_prob_mask(rng: &mut impl Rng, h: usize, w: usize, levels: u32) -> ProbMask {
    let v = (0..h * w).map(|_| rng.gen_range(0..=levels) as f64 / levels as f64).collect();
    ProbMask::new(h, w, v).unwrap()
}

pub fn gt_mask(rng: &mut impl Rng, h: usize, w: usize, lesion_rate: f64) -> GroundTruthMask {
    let v = (0..h * w).map(|_| rng.gen_bool(lesion_rate) as u8).collect();
    GroundTruthMask::new(h, w, v).unwrap()
}

/// Ground truth with at least one pixel of each class (needs `h·w ≥ 2`).
pub fn gt_mask_both(rng: &mut impl Rng, h: usize, w: usize) -> GroundTruthMask {
    loop {
        let g = gt_mask(rng, h, w, 0.4);
        let n = g.lesion_count();
        if n > 0 && n < h * w {
            return g;
        }
    }
}

/// Full sort by (error descending, index ascending), then truncate.
pub fn hard_pixel_oracle(pred: &ProbMask, gt: &GroundTruthMask, k: usize) -> HardPixelSet {
    let mut bg: Vec<(usize, f64, f64)> = Vec::new();
    let mut fg: Vec<(usize, f64, f64)> = Vec::new();
    for i in 0..pred.values().len() {
        let p = pred.values()[i];
        let y = gt.values()[i] as f64;
        let e = (p - y).abs();
        if gt.values()[i] == 1 {
            fg.push((i, p, e));
        } else {
            bg.push((i, p, e));
        }
    }
    let take = |mut v: Vec<(usize, f64, f64)>| -> Vec<HardPixel> {
        v.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
        v.into_iter().take(k).map(|(index, value, _)| HardPixel { index, value }).collect()
    };
    HardPixelSet {
        background: take(bg),
        lesion: take(fg),
    }
}

pub fn counts_oracle(pred: &ProbMask, gt: &GroundTruthMask, threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (p, y) in pred.values().iter().zip(gt.values()) {
        match (*p >= threshold, *y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

fn ratio(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// (JA, DI, AC, SE, SP) with the empty-denominator conventions.
pub fn metric_oracle(c: &ConfusionCounts) -> [f64; 5] {
    let ja = ratio(c.tp, c.tp + c.fp + c.fn_, 1.0);
    let di = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, 1.0);
    let total = c.tp + c.fp + c.tn + c.fn_;
    let ac = ratio(c.tp + c.tn, total, 1.0);
    let se = ratio(c.tp, c.tp + c.fn_, if c.fn_ == 0 { 1.0 } else { 0.0 });
    let sp = ratio(c.tn, c.tn + c.fp, if c.fp == 0 { 1.0 } else { 0.0 });
    [ja, di, ac, se, sp]
}

/// All-pairs Mann–Whitney statistic.
pub fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Per-pixel weighted channel sum in f64, min-max normalized.
pub fn cam_oracle(features: &[f32], channels: usize, plane: usize, weights: &[f32]) -> Vec<f64> {
    let raw: Vec<f64> = (0..plane)
        .map(|p| (0..channels).map(|k| weights[k] as f64 * features[k * plane + p] as f64).sum())
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    raw.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect()
}

/// Central-difference derivative of `f` along each pixel of `pred`.
pub fn numeric_grad(pred: &ProbMask, step: f64, f: impl Fn(&ProbMask) -> f64) -> Vec<f64> {
    let (h, w) = (pred.height(), pred.width());
    (0..pred.values().len())
        .map(|i| {
            let mut up = pred.values().to_vec();
            let mut down = up.clone();
            up[i] += step;
            down[i] -= step;
            let fu = f(&ProbMask::new(h, w, up).unwrap());
            let fd = f(&ProbMask::new(h, w, down).unwrap());
            (fu - fd) / (2.0 * step)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Desk configuration for the synthetic generator: 200/50/50 splits at
/// 64×64 with the default loss settings.
pub fn desk(seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig::synthetic_desk();
    c.seed = seed;
    c
}

/// A few epochs on a small split, for plumbing tests.
pub fn tiny(seed: u64) -> PipelineConfig {
    let mut c = desk(seed);
    c.data.seg_split = [24, 8, 8];
    c.data.cls_split = [24, 8, 8];
    c.optim.max_epochs = 2;
    c.optim.batch_size_seg = 8;
    c.optim.batch_size_cls = 8;
    c.stages.fine_tune_epochs = 1;
    c.eval.overlay_samples = 2;
    c
}

/// Every regular file under `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Names of files that differ between two trees (or exist in only one).
pub fn tree_diff(a: &Path, b: &Path) -> Vec<PathBuf> {
    let (ta, tb) = (tree(a), tree(b));
    let mut keys: Vec<&PathBuf> = ta.keys().chain(tb.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter().filter(|k| ta.get(*k) != tb.get(*k)).cloned().collect()
}
