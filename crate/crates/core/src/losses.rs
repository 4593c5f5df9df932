//! Pixel-wise segmentation losses: Dice, the pairwise rank loss over online
//! hard pixels, their weighted sum, and the cross-entropy style baselines.
//!
//! Every loss returns its value together with the gradient with respect to
//! each predicted probability, so networks can backpropagate through it.
//! All functions work on a single image; [`batch_mean`] averages over a
//! batch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Grid;

/// Lower bound applied to probabilities before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-7;

/// Per-pixel lesion probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask(Grid<f64>);

impl ProbMask {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::contract(format!(
                "probability at pixel {i} is {v}, outside [0, 1]"
            )));
        }
        Ok(Self(Grid::new(height, width, values)?))
    }

    pub fn from_f32(height: usize, width: usize, values: &[f32]) -> Result<Self> {
        Self::new(height, width, values.iter().map(|&v| v as f64).collect())
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }
}

/// Binary ground truth: 1 = lesion, 0 = background.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMask(Grid<u8>);

impl GroundTruthMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::contract(format!(
                "mask label at pixel {i} is {v}, expected 0 or 1"
            )));
        }
        Ok(Self(Grid::new(height, width, values)?))
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn values(&self) -> &[u8] {
        self.0.values()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn lesion_count(&self) -> usize {
        self.values().iter().filter(|&&v| v == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HybridLossParams {
    /// Weight of the rank term.
    pub lambda_weight: f64,
    /// Hard pixels kept per class.
    pub k_hard: usize,
    pub margin: f64,
    /// Dice smoothing term.
    pub epsilon: f64,
}

impl Default for HybridLossParams {
    fn default() -> Self {
        Self {
            lambda_weight: 0.05,
            k_hard: 30,
            margin: 0.3,
            epsilon: 1.0,
        }
    }
}

impl HybridLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_weight >= 0.0) {
            return Err(Error::config(format!(
                "loss.lambda_weight must be nonnegative, got {}",
                self.lambda_weight
            )));
        }
        if self.k_hard == 0 {
            return Err(Error::config("loss.k_hard must be positive"));
        }
        if !(0.0..=1.0).contains(&self.margin) {
            return Err(Error::config(format!(
                "loss.margin must lie in [0, 1], got {}",
                self.margin
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!(
                "loss.epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// A loss value and its gradient with respect to every predicted probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_shapes(pred: &ProbMask, gt: &GroundTruthMask) -> Result<()> {
    if pred.grid().same_shape(gt.grid()) {
        Ok(())
    } else {
        Err(Error::contract(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )))
    }
}

pub fn dice_loss(pred: &ProbMask, gt: &GroundTruthMask, epsilon: f64) -> Result<f64> {
    dice_loss_grad(pred, gt, epsilon).map(|o| o.value)
}

/// `1 - 2 Σ p·y / (Σ (p + y) + ε)`.
pub fn dice_loss_grad(pred: &ProbMask, gt: &GroundTruthMask, epsilon: f64) -> Result<LossOutput> {
    check_shapes(pred, gt)?;
    if !(epsilon > 0.0) {
        return Err(Error::contract(format!("dice epsilon must be positive, got {epsilon}")));
    }
    let mut intersection = 0.0;
    let mut total = 0.0;
    for (&p, &y) in pred.values().iter().zip(gt.values()) {
        let y = y as f64;
        intersection += p * y;
        total += p + y;
    }
    let denom = total + epsilon;
    let value = 1.0 - 2.0 * intersection / denom;
    let shared = 2.0 * intersection / (denom * denom);
    let grad = gt
        .values()
        .iter()
        .map(|&y| shared - 2.0 * y as f64 / denom)
        .collect();
    Ok(LossOutput { value, grad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardPixel {
    /// Row-major pixel index.
    pub index: usize,
    /// Predicted probability at that pixel.
    pub value: f64,
}

/// Per-class top-K pixels by prediction error, each list ordered by
/// descending error.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HardPixelSet {
    pub background: Vec<HardPixel>,
    pub lesion: Vec<HardPixel>,
}

fn top_k_by_error(candidates: &mut Vec<(usize, f64, f64)>, k: usize) -> Vec<HardPixel> {
    // (index, value, error); larger error first, lower index on ties.
    let order = |a: &(usize, f64, f64), b: &(usize, f64, f64)| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    };
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, order);
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(order);
    candidates
        .iter()
        .map(|&(index, value, _)| HardPixel { index, value })
        .collect()
}

/// Online hard-pixel mining: error is `|p - y|`, ties go to the lower index.
pub fn select_hard_pixels(pred: &ProbMask, gt: &GroundTruthMask, k_hard: usize) -> Result<HardPixelSet> {
    check_shapes(pred, gt)?;
    if k_hard == 0 {
        return Err(Error::contract("k_hard must be positive"));
    }
    let mut background = Vec::new();
    let mut lesion = Vec::new();
    for (i, (&p, &y)) in pred.values().iter().zip(gt.values()).enumerate() {
        if y == 1 {
            lesion.push((i, p, 1.0 - p));
        } else {
            background.push((i, p, p));
        }
    }
    Ok(HardPixelSet {
        background: top_k_by_error(&mut background, k_hard),
        lesion: top_k_by_error(&mut lesion, k_hard),
    })
}

pub fn rank_loss(pred: &ProbMask, gt: &GroundTruthMask, k_hard: usize, margin: f64) -> Result<f64> {
    rank_loss_grad(pred, gt, k_hard, margin).map(|o| o.value)
}

/// Mean hinge `max(0, h0 - h1 + margin)` over all (background, lesion) pairs
/// of hard pixels. Zero when either class has no pixels. Selection is not
/// differentiated; gradient flows only into the selected pixels.
pub fn rank_loss_grad(pred: &ProbMask, gt: &GroundTruthMask, k_hard: usize, margin: f64) -> Result<LossOutput> {
    let hard = select_hard_pixels(pred, gt, k_hard)?;
    let mut grad = vec![0.0; pred.values().len()];
    if hard.background.is_empty() || hard.lesion.is_empty() {
        return Ok(LossOutput { value: 0.0, grad });
    }
    let pairs = (hard.background.len() * hard.lesion.len()) as f64;
    let mut sum = 0.0;
    for b in &hard.background {
        for l in &hard.lesion {
            let hinge = b.value - l.value + margin;
            if hinge > 0.0 {
                sum += hinge;
                grad[b.index] += 1.0 / pairs;
                grad[l.index] -= 1.0 / pairs;
            }
        }
    }
    Ok(LossOutput {
        value: sum / pairs,
        grad,
    })
}

pub fn hybrid_loss(pred: &ProbMask, gt: &GroundTruthMask, params: &HybridLossParams) -> Result<f64> {
    hybrid_loss_grad(pred, gt, params).map(|o| o.value)
}

/// Dice loss plus `lambda_weight` times the rank loss.
pub fn hybrid_loss_grad(pred: &ProbMask, gt: &GroundTruthMask, params: &HybridLossParams) -> Result<LossOutput> {
    let mut out = dice_loss_grad(pred, gt, params.epsilon)?;
    if params.lambda_weight == 0.0 {
        return Ok(out);
    }
    let rank = rank_loss_grad(pred, gt, params.k_hard, params.margin)?;
    out.value += params.lambda_weight * rank.value;
    for (g, r) in out.grad.iter_mut().zip(rank.grad) {
        *g += params.lambda_weight * r;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeights {
    pub lesion: f64,
    pub background: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self {
            lesion: 1.0,
            background: 1.0,
        }
    }
}

/// Probability assigned to the true class, and the sign of d(pt)/d(p).
fn true_class_prob(p: f64, y: u8) -> (f64, f64) {
    if y == 1 {
        (p, 1.0)
    } else {
        (1.0 - p, -1.0)
    }
}

pub fn weighted_cross_entropy_loss(pred: &ProbMask, gt: &GroundTruthMask, weights: ClassWeights) -> Result<f64> {
    weighted_cross_entropy_grad(pred, gt, weights).map(|o| o.value)
}

/// Per-pixel `-w_y ln(pt)` averaged over pixels.
pub fn weighted_cross_entropy_grad(pred: &ProbMask, gt: &GroundTruthMask, weights: ClassWeights) -> Result<LossOutput> {
    check_shapes(pred, gt)?;
    if !(weights.lesion > 0.0 && weights.background > 0.0) {
        return Err(Error::contract(format!(
            "class weights must be positive, got {weights:?}"
        )));
    }
    let count = pred.values().len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.values().len());
    for (&p, &y) in pred.values().iter().zip(gt.values()) {
        let w = if y == 1 { weights.lesion } else { weights.background };
        let (pt, sign) = true_class_prob(p, y);
        sum += w * -pt.max(LOG_FLOOR).ln();
        grad.push(if pt > LOG_FLOOR { -w / pt * sign / count } else { 0.0 });
    }
    Ok(LossOutput {
        value: sum / count,
        grad,
    })
}

/// Unweighted binary cross-entropy.
pub fn cross_entropy_loss(pred: &ProbMask, gt: &GroundTruthMask) -> Result<f64> {
    weighted_cross_entropy_loss(pred, gt, ClassWeights::default())
}

pub fn focal_loss(pred: &ProbMask, gt: &GroundTruthMask, gamma: f64, alpha: f64) -> Result<f64> {
    focal_loss_grad(pred, gt, gamma, alpha).map(|o| o.value)
}

/// Per-pixel `-α (1 - pt)^γ ln(pt)` averaged over pixels.
pub fn focal_loss_grad(pred: &ProbMask, gt: &GroundTruthMask, gamma: f64, alpha: f64) -> Result<LossOutput> {
    check_shapes(pred, gt)?;
    if !(gamma >= 0.0) {
        return Err(Error::contract(format!("focal gamma must be nonnegative, got {gamma}")));
    }
    let count = pred.values().len() as f64;
    let mut sum = 0.0;
    let mut grad = Vec::with_capacity(pred.values().len());
    for (&p, &y) in pred.values().iter().zip(gt.values()) {
        let (pt, sign) = true_class_prob(p, y);
        let log_pt = pt.max(LOG_FLOOR).ln();
        let q = 1.0 - pt;
        sum += alpha * q.powf(gamma) * -log_pt;
        let d_pt = if pt > LOG_FLOOR {
            // d/dpt of -α q^γ ln pt
            let modulating = if gamma == 0.0 || q == 0.0 {
                0.0
            } else {
                gamma * q.powf(gamma - 1.0) * log_pt
            };
            alpha * (modulating - q.powf(gamma) / pt)
        } else {
            0.0
        };
        grad.push(d_pt * sign / count);
    }
    Ok(LossOutput {
        value: sum / count,
        grad,
    })
}

/// Segmentation objective used when training a segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegLoss {
    Dice { epsilon: f64 },
    Hybrid(HybridLossParams),
    Wce(ClassWeights),
    Focal { gamma: f64, alpha: f64 },
}

impl SegLoss {
    pub fn name(&self) -> &'static str {
        match self {
            SegLoss::Dice { .. } => "dice",
            SegLoss::Hybrid(_) => "hybrid",
            SegLoss::Wce(_) => "wce",
            SegLoss::Focal { .. } => "focal",
        }
    }

    pub fn evaluate(&self, pred: &ProbMask, gt: &GroundTruthMask) -> Result<LossOutput> {
        match *self {
            SegLoss::Dice { epsilon } => dice_loss_grad(pred, gt, epsilon),
            SegLoss::Hybrid(ref params) => hybrid_loss_grad(pred, gt, params),
            SegLoss::Wce(weights) => weighted_cross_entropy_grad(pred, gt, weights),
            SegLoss::Focal { gamma, alpha } => focal_loss_grad(pred, gt, gamma, alpha),
        }
    }
}

/// Evaluates `loss` per image and averages values and gradients over the batch.
pub fn batch_mean(loss: &SegLoss, preds: &[ProbMask], gts: &[GroundTruthMask]) -> Result<(f64, Vec<Vec<f64>>)> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::contract(format!(
            "batch has {} predictions and {} masks",
            preds.len(),
            gts.len()
        )));
    }
    let n = preds.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(preds.len());
    for (p, g) in preds.iter().zip(gts) {
        let out = loss.evaluate(p, g)?;
        total += out.value;
        grads.push(out.grad.into_iter().map(|v| v / n).collect());
    }
    Ok((total / n, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pm(h: usize, w: usize, v: &[f64]) -> ProbMask {
        ProbMask::new(h, w, v.to_vec()).unwrap()
    }

    fn gt(h: usize, w: usize, v: &[u8]) -> GroundTruthMask {
        GroundTruthMask::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn dice_perfect_agreement_is_zero() {
        let l = dice_loss(&pm(2, 2, &[1.0; 4]), &gt(2, 2, &[1; 4]), 1e-6).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn dice_half_overlap() {
        let l = dice_loss(&pm(1, 4, &[1.0, 1.0, 0.0, 0.0]), &gt(1, 4, &[1, 0, 0, 0]), 1.0).unwrap();
        assert_abs_diff_eq!(l, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dice_total_disagreement_tends_to_one() {
        let l = dice_loss(&pm(3, 3, &[0.0; 9]), &gt(3, 3, &[1; 9]), 1e-9).unwrap();
        assert_abs_diff_eq!(l, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn dice_rejects_shape_mismatch_and_bad_probabilities() {
        let err = dice_loss(&pm(1, 4, &[0.5; 4]), &gt(2, 2, &[0; 4]), 1.0).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(matches!(ProbMask::new(1, 2, vec![0.5, 1.2]), Err(Error::Contract(_))));
        assert!(matches!(ProbMask::new(1, 1, vec![f64::NAN]), Err(Error::Contract(_))));
        assert!(matches!(GroundTruthMask::new(1, 1, vec![2]), Err(Error::Contract(_))));
    }

    #[test]
    fn hard_pixels_all_background() {
        let set = select_hard_pixels(&pm(1, 4, &[0.9, 0.1, 0.5, 0.2]), &gt(1, 4, &[0; 4]), 2).unwrap();
        assert_eq!(
            set.background,
            vec![HardPixel { index: 0, value: 0.9 }, HardPixel { index: 2, value: 0.5 }]
        );
        assert!(set.lesion.is_empty());
    }

    #[test]
    fn hard_pixels_two_by_two() {
        let set = select_hard_pixels(&pm(2, 2, &[0.4, 0.9, 0.3, 0.1]), &gt(2, 2, &[1, 1, 0, 0]), 1).unwrap();
        assert_eq!(set.lesion, vec![HardPixel { index: 0, value: 0.4 }]);
        assert_eq!(set.background, vec![HardPixel { index: 2, value: 0.3 }]);
    }

    #[test]
    fn hard_pixels_zero_error_ties_use_lowest_indices() {
        let labels = [1u8, 0, 0, 1, 1, 0];
        let pred: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
        let set = select_hard_pixels(&pm(2, 3, &pred), &gt(2, 3, &labels), 2).unwrap();
        assert_eq!(set.lesion.iter().map(|h| h.index).collect::<Vec<_>>(), vec![0, 3]);
        assert_eq!(set.background.iter().map(|h| h.index).collect::<Vec<_>>(), vec![1, 2]);
        assert!(set.lesion.iter().all(|h| h.value == 1.0));
        assert!(set.background.iter().all(|h| h.value == 0.0));
    }

    #[test]
    fn rank_single_pair() {
        let l = rank_loss(&pm(1, 2, &[0.6, 0.7]), &gt(1, 2, &[0, 1]), 1, 0.3).unwrap();
        assert_abs_diff_eq!(l, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn rank_satisfied_margin_is_zero() {
        let l = rank_loss(&pm(1, 4, &[0.1, 0.2, 0.8, 0.95]), &gt(1, 4, &[0, 0, 1, 1]), 2, 0.3).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn rank_empty_class_is_zero_without_gradient() {
        let out = rank_loss_grad(&pm(1, 3, &[0.9, 0.8, 0.7]), &gt(1, 3, &[0; 3]), 30, 0.3).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn rank_small_population_uses_pair_count() {
        // 1 lesion pixel, 2 background pixels, K = 30: normalizer 2, not 900.
        let l = rank_loss(&pm(1, 3, &[0.5, 0.4, 0.6]), &gt(1, 3, &[0, 0, 1]), 30, 0.3).unwrap();
        assert_abs_diff_eq!(l, ((0.5 - 0.6 + 0.3) + (0.4 - 0.6 + 0.3)) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn hybrid_combines_independent_components() {
        // dice 0.5 from [1,1,0,0]/[1,0,0,0] with eps 1; rank 0.2 from the
        // single pair (0.6, 0.7); evaluate each and combine.
        let dice = dice_loss(&pm(1, 4, &[1.0, 1.0, 0.0, 0.0]), &gt(1, 4, &[1, 0, 0, 0]), 1.0).unwrap();
        let rank = rank_loss(&pm(1, 2, &[0.6, 0.7]), &gt(1, 2, &[0, 1]), 1, 0.3).unwrap();
        assert_abs_diff_eq!(dice + 0.05 * rank, 0.51, epsilon = 1e-12);
    }

    #[test]
    fn hybrid_with_zero_lambda_is_dice() {
        let p = pm(1, 4, &[0.3, 0.8, 0.1, 0.6]);
        let g = gt(1, 4, &[0, 1, 0, 1]);
        let params = HybridLossParams {
            lambda_weight: 0.0,
            ..Default::default()
        };
        assert_eq!(hybrid_loss_grad(&p, &g, &params).unwrap(), dice_loss_grad(&p, &g, 1.0).unwrap());
    }

    #[test]
    fn hybrid_perfect_prediction_is_zero() {
        let labels = [0u8, 1, 1, 0];
        let pred: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
        let params = HybridLossParams {
            epsilon: 1e-9,
            ..Default::default()
        };
        let l = hybrid_loss(&pm(2, 2, &pred), &gt(2, 2, &labels), &params).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn wce_scalar_values() {
        let w = ClassWeights { lesion: 2.0, background: 1.0 };
        let one = |y: u8, w: ClassWeights| weighted_cross_entropy_loss(&pm(1, 1, &[0.5]), &gt(1, 1, &[y]), w).unwrap();
        assert_abs_diff_eq!(one(1, ClassWeights::default()), 0.693_147_180_559_945_3, epsilon = 1e-12);
        assert_abs_diff_eq!(one(0, w), 0.693_147_180_559_945_3, epsilon = 1e-12);
        assert_abs_diff_eq!(one(1, w), 1.386_294_361_119_890_6, epsilon = 1e-12);
    }

    #[test]
    fn wce_binary_match_is_near_zero() {
        let l = cross_entropy_loss(&pm(1, 3, &[1.0, 0.0, 1.0]), &gt(1, 3, &[1, 0, 1])).unwrap();
        assert!(l < 1e-6);
        // Clamping keeps a total miss finite.
        let miss = cross_entropy_loss(&pm(1, 1, &[0.0]), &gt(1, 1, &[1])).unwrap();
        assert_abs_diff_eq!(miss, -(LOG_FLOOR.ln()), epsilon = 1e-9);
    }

    #[test]
    fn focal_scalar_value() {
        let l = focal_loss(&pm(1, 1, &[0.9]), &gt(1, 1, &[1]), 2.0, 1.0).unwrap();
        assert_abs_diff_eq!(l, 0.001_053_605_156_578_263, epsilon = 1e-12);
        let near_one = focal_loss(&pm(1, 1, &[1.0 - 1e-9]), &gt(1, 1, &[1]), 2.0, 1.0).unwrap();
        assert!(near_one < 1e-20);
    }

    #[test]
    fn focal_gradient_is_finite_at_certainty() {
        for gamma in [0.0, 0.5, 2.0] {
            let out = focal_loss_grad(&pm(1, 2, &[1.0, 0.0]), &gt(1, 2, &[1, 0]), gamma, 1.0).unwrap();
            assert!(out.grad.iter().all(|g| g.is_finite()));
        }
    }

    #[test]
    fn params_validation() {
        assert!(HybridLossParams::default().validate().is_ok());
        let bad = HybridLossParams { k_hard: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = HybridLossParams { epsilon: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = HybridLossParams { margin: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
