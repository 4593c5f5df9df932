//! Segmentation and classification metrics as scored by the ISIC challenge.

use serde::{Deserialize, Serialize};

use crate::cam::argmax;
use crate::error::{Error, Result};
use crate::losses::{GroundTruthMask, ProbMask};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    /// Tallies binary decisions against binary truths.
    pub fn from_decisions(pred: impl IntoIterator<Item = bool>, truth: impl IntoIterator<Item = bool>) -> Self {
        let mut c = Self::default();
        for (p, t) in pred.into_iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

/// Binarizes `pred` at `threshold` (`p >= threshold` is lesion) and tallies.
pub fn confusion_counts(pred: &ProbMask, gt: &GroundTruthMask, threshold: f64) -> Result<ConfusionCounts> {
    if !pred.grid().same_shape(gt.grid()) {
        return Err(Error::contract(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(ConfusionCounts::from_decisions(
        pred.values().iter().map(|&p| p >= threshold),
        gt.values().iter().map(|&y| y == 1),
    ))
}

/// `num / den`, or the degenerate-case value when `den == 0`.
fn ratio(num: u64, den: u64, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// `tp / (tp + fp + fn)`; both masks empty counts as perfect agreement.
pub fn jaccard(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp + c.fn_, 1.0)
}

pub fn dice_coef(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, 1.0)
}

pub fn pixel_accuracy(c: &ConfusionCounts) -> f64 {
    ratio(c.tp + c.tn, c.total(), 1.0)
}

/// With no positives present: 1 if nothing was missed (always true then).
pub fn sensitivity(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_, if c.fn_ == 0 { 1.0 } else { 0.0 })
}

pub fn specificity(c: &ConfusionCounts) -> f64 {
    ratio(c.tn, c.tn + c.fp, if c.fp == 0 { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub ja: f64,
    pub di: f64,
    pub ac: f64,
    pub se: f64,
    pub sp: f64,
}

impl SegScores {
    pub fn from_counts(c: &ConfusionCounts) -> Self {
        Self {
            ja: jaccard(c),
            di: dice_coef(c),
            ac: pixel_accuracy(c),
            se: sensitivity(c),
            sp: specificity(c),
        }
    }

    fn mean(rows: &[SegScores]) -> Self {
        let n = rows.len().max(1) as f64;
        let sum = |f: fn(&SegScores) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            ja: sum(|r| r.ja),
            di: sum(|r| r.di),
            ac: sum(|r| r.ac),
            se: sum(|r| r.se),
            sp: sum(|r| r.sp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegImageRow {
    pub id: String,
    pub counts: ConfusionCounts,
    pub scores: SegScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub rows: Vec<SegImageRow>,
    /// Mean of per-image scores.
    pub mean: SegScores,
    /// Scores of the counts pooled over all images.
    pub pooled: SegScores,
}

impl SegReport {
    pub fn from_rows(rows: Vec<SegImageRow>) -> Self {
        let scores: Vec<SegScores> = rows.iter().map(|r| r.scores).collect();
        let mut pooled = ConfusionCounts::default();
        rows.iter().for_each(|r| pooled.add(&r.counts));
        Self {
            mean: SegScores::mean(&scores),
            pooled: SegScores::from_counts(&pooled),
            rows,
        }
    }
}

/// Evaluates one prediction per image.
pub fn segmentation_report(items: &[(String, ProbMask, GroundTruthMask)], threshold: f64) -> Result<SegReport> {
    let rows = items
        .iter()
        .map(|(id, pred, gt)| {
            let counts = confusion_counts(pred, gt, threshold)?;
            Ok(SegImageRow {
                id: id.clone(),
                counts,
                scores: SegScores::from_counts(&counts),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SegReport::from_rows(rows))
}

/// Area under the ROC curve by trapezoidal integration over every distinct
/// score threshold; equals the Mann–Whitney statistic with ties counted half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "ROC AUC needs at least one positive and one negative label".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal));
    let (mut tp, mut fp) = (0u64, 0u64);
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(area / (positives as f64 * negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryTaskReport {
    pub positive_class: usize,
    pub auc: f64,
    pub ac: f64,
    pub se: f64,
    pub sp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClsReport {
    pub tasks: Vec<BinaryTaskReport>,
    pub average_auc: f64,
    /// Multi-class argmax accuracy.
    pub accuracy: f64,
}

/// One-vs-rest report for `positive_class`, deciding by argmax.
pub fn classification_report(probs: &[Vec<f64>], labels: &[usize], positive_class: usize) -> Result<BinaryTaskReport> {
    if probs.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} probability vectors but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| positive_class >= p.len()) {
        return Err(Error::contract(format!(
            "positive class {positive_class} out of range for {} classes",
            p.len()
        )));
    }
    let truth: Vec<bool> = labels.iter().map(|&l| l == positive_class).collect();
    let decisions = probs.iter().map(|p| argmax(p) == positive_class);
    let counts = ConfusionCounts::from_decisions(decisions, truth.iter().copied());
    let scores: Vec<f64> = probs.iter().map(|p| p[positive_class]).collect();
    let binary: Vec<u8> = truth.iter().map(|&t| t as u8).collect();
    Ok(BinaryTaskReport {
        positive_class,
        auc: roc_auc(&scores, &binary)?,
        ac: pixel_accuracy(&counts),
        se: sensitivity(&counts),
        sp: specificity(&counts),
    })
}

pub fn multiclass_accuracy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(p, &l)| argmax(p) == l)
        .count();
    hits as f64 / labels.len() as f64
}

/// Reports for each task in `positive_classes` and their mean AUC.
pub fn classification_summary(probs: &[Vec<f64>], labels: &[usize], positive_classes: &[usize]) -> Result<ClsReport> {
    let tasks = positive_classes
        .iter()
        .map(|&c| classification_report(probs, labels, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClsReport {
        average_auc: average_auc(&tasks),
        accuracy: multiclass_accuracy(probs, labels),
        tasks,
    })
}

pub fn average_auc(tasks: &[BinaryTaskReport]) -> f64 {
    if tasks.is_empty() {
        return 0.0;
    }
    tasks.iter().map(|t| t.auc).sum::<f64>() / tasks.len() as f64
}
