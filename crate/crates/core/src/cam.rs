//! Class activation maps: the classifier's last feature grid weighted by one
//! class's output-layer weights, min-max normalized for transfer to the
//! enhanced segmenter.

use crate::error::{Error, Result};
use crate::networks::ClassifierNet;
use crate::nn::resize::resize_bilinear;
use crate::tensor::{Grid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMap {
    /// Normalized to `[0, 1]`; all zeros when the raw map was constant.
    pub values: Grid<f32>,
    pub source_class: usize,
    pub raw_min: f32,
    pub raw_max: f32,
}

impl LocalizationMap {
    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }
}

/// Min-max normalization; a constant grid maps to zeros.
pub fn normalize(raw: Grid<f32>, source_class: usize) -> LocalizationMap {
    let (lo, hi) = raw
        .values()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    let values = if range > 0.0 {
        raw.map(|v| ((v - lo) / range).clamp(0.0, 1.0))
    } else {
        raw.map(|_| 0.0)
    };
    LocalizationMap {
        values,
        source_class,
        raw_min: lo,
        raw_max: hi,
    }
}

/// Raw weighted channel sum `Σ_k w[k] · F_k` for one sample's feature grid
/// (`[K, h, w]` planes) and one weight column.
pub fn weighted_feature_sum(features: &[f32], channels: usize, height: usize, width: usize, weights: &[f32]) -> Result<Grid<f32>> {
    if weights.len() != channels || features.len() != channels * height * width {
        return Err(Error::contract(format!(
            "{} weights for {channels} feature channels of {height}x{width} ({} values)",
            weights.len(),
            features.len()
        )));
    }
    let plane = height * width;
    let mut acc = vec![0.0f32; plane];
    for (k, &w) in weights.iter().enumerate() {
        for (a, &f) in acc.iter_mut().zip(&features[k * plane..(k + 1) * plane]) {
            *a += w * f;
        }
    }
    Grid::new(height, width, acc)
}

/// CAM of `class_index` from a feature batch `[1, K, h, w]` and FC weights.
pub fn cam_from_features(features: &Tensor, fc_weights: &Grid<f32>, class_index: usize) -> Result<LocalizationMap> {
    let classes = fc_weights.width();
    if class_index >= classes {
        return Err(Error::contract(format!(
            "class index {class_index} out of range for {classes} classes"
        )));
    }
    if features.batch() != 1 {
        return Err(Error::contract("CAM extraction takes a single sample"));
    }
    let column: Vec<f32> = (0..fc_weights.height())
        .map(|k| fc_weights.get(k, class_index))
        .collect();
    let raw = weighted_feature_sum(
        features.sample(0),
        features.channels(),
        features.height(),
        features.width(),
        &column,
    )?;
    Ok(normalize(raw, class_index))
}

/// Runs the classifier (eval mode) on one 4-channel input and returns the CAM
/// for `class_index` at the classifier's feature resolution.
pub fn compute_cam(classifier: &mut ClassifierNet, input4: &Tensor, class_index: usize) -> Result<LocalizationMap> {
    if class_index >= classifier.num_classes() {
        return Err(Error::contract(format!(
            "class index {class_index} out of range for {} classes",
            classifier.num_classes()
        )));
    }
    let out = classifier.forward(input4, false)?;
    cam_from_features(&out.features, &classifier.fc_weight_matrix(), class_index)
}

/// Lowest index among the maxima.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

/// Builds the 4-channel input from a `[1, 3, H, W]` image and an `H×W` mask.
pub fn image_with_mask(image: &Tensor, mask: &Grid<f32>) -> Result<Tensor> {
    if image.batch() != 1 || image.channels() != 3 {
        return Err(Error::contract(format!("expected a [1, 3, H, W] image, got {:?}", image.shape())));
    }
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::contract(format!(
            "mask is {}x{} but image is {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    let mask_t = Tensor::from_vec([1, 1, mask.height(), mask.width()], mask.values().to_vec())?;
    Tensor::concat_channels(image, &mask_t)
}

/// CAM choice for transfer: the predicted class, or a given class override.
pub fn cam_for_sample(
    classifier: &mut ClassifierNet,
    image: &Tensor,
    coarse_mask: &Grid<f32>,
    class_override: Option<usize>,
) -> Result<LocalizationMap> {
    let input = image_with_mask(image, coarse_mask)?;
    let out = classifier.forward(&input, false)?;
    let class = match class_override {
        Some(c) => c,
        None => argmax(&out.probs[0]),
    };
    cam_from_features(&out.features, &classifier.fc_weight_matrix(), class)
}

/// Every class's CAM for one sample, in class order.
pub fn cams_all_classes(classifier: &mut ClassifierNet, image: &Tensor, coarse_mask: &Grid<f32>) -> Result<Vec<LocalizationMap>> {
    let input = image_with_mask(image, coarse_mask)?;
    let out = classifier.forward(&input, false)?;
    let weights = classifier.fc_weight_matrix();
    (0..classifier.num_classes())
        .map(|c| cam_from_features(&out.features, &weights, c))
        .collect()
}

/// Bilinear resize, clamped to `[0, 1]`. Raw range metadata is kept.
pub fn resize_map(map: &LocalizationMap, target_h: usize, target_w: usize) -> Result<LocalizationMap> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::contract("resize target must be positive"));
    }
    let values = resize_bilinear(map.values.values(), map.height(), map.width(), target_h, target_w)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(LocalizationMap {
        values: Grid::new(target_h, target_w, values)?,
        ..map.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_channel_features() -> Tensor {
        Tensor::from_vec([1, 2, 2, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn hand_evaluated_cam() {
        let w = Grid::new(2, 1, vec![1.0, -1.0]).unwrap();
        let cam = cam_from_features(&two_channel_features(), &w, 0).unwrap();
        assert_eq!(cam.values.values(), &[1.0, 0.5, 0.5, 0.0]);
        assert_eq!((cam.raw_min, cam.raw_max), (-1.0, 1.0));
    }

    #[test]
    fn zero_weights_give_zero_map() {
        let w = Grid::new(2, 1, vec![0.0, 0.0]).unwrap();
        let cam = cam_from_features(&two_channel_features(), &w, 0).unwrap();
        assert!(cam.values.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scaling_weights_keeps_normalized_map() {
        let w = Grid::new(2, 1, vec![0.3, -0.7]).unwrap();
        let w2 = w.map(|v| v * 2.0);
        let a = cam_from_features(&two_channel_features(), &w, 0).unwrap();
        let b = cam_from_features(&two_channel_features(), &w2, 0).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn class_index_out_of_range() {
        let w = Grid::new(2, 2, vec![0.0; 4]).unwrap();
        let err = cam_from_features(&two_channel_features(), &w, 2).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn resize_examples() {
        let map = normalize(Grid::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap(), 0);
        let same = resize_map(&map, 2, 2).unwrap();
        assert_eq!(same.values, map.values);
        let wide = resize_map(&map, 2, 4).unwrap();
        assert_eq!(wide.values.values(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
        let constant = LocalizationMap {
            values: Grid::filled(3, 3, 0.4),
            source_class: 1,
            raw_min: 0.0,
            raw_max: 0.0,
        };
        let big = resize_map(&constant, 5, 7).unwrap();
        assert!(big.values.values().iter().all(|&v| (v - 0.4).abs() < 1e-7));
    }

    #[test]
    fn normalization_is_idempotent() {
        let map = normalize(Grid::new(1, 4, vec![-2.0, 3.0, 0.5, 1.0]).unwrap(), 0);
        let again = normalize(map.values.clone(), 0);
        assert_eq!(again.values, map.values);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0 / 3.0; 3]), 0);
    }
}
