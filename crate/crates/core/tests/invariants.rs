mod common;

use common::*;
use mbdcnn::losses::*;
use mbdcnn::metrics::*;
use proptest::prelude::*;

fn masks(max_side: usize) -> impl Strategy<Value = (ProbMask, GroundTruthMask)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        (
            prop::collection::vec(0u8..=8, h * w),
            prop::collection::vec(prop::bool::ANY, h * w),
        )
            .prop_map(move |(p, y)| {
                let pred = ProbMask::new(h, w, p.iter().map(|&q| q as f64 / 8.0).collect()).unwrap();
                let gt = GroundTruthMask::new(h, w, y.iter().map(|&b| b as u8).collect()).unwrap();
                (pred, gt)
            })
    })
}

fn permuted(pred: &ProbMask, gt: &GroundTruthMask, seed: u64) -> (ProbMask, GroundTruthMask) {
    use rand::seq::SliceRandom;
    let n = pred.values().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed));
    let p = order.iter().map(|&i| pred.values()[i]).collect();
    let y = order.iter().map(|&i| gt.values()[i]).collect();
    (
        ProbMask::new(pred.height(), pred.width(), p).unwrap(),
        GroundTruthMask::new(pred.height(), pred.width(), y).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dice_follows_from_jaccard((pred, gt) in masks(12), t in 0.0f64..1.0) {
        let c = confusion_counts(&pred, &gt, t).unwrap();
        let ja = jaccard(&c);
        prop_assert!((dice_coef(&c) - 2.0 * ja / (1.0 + ja)).abs() <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn metrics_stay_in_unit_interval((pred, gt) in masks(12), t in 0.0f64..1.0) {
        let c = confusion_counts(&pred, &gt, t).unwrap();
        prop_assert_eq!(c.total() as usize, pred.values().len());
        for m in [jaccard(&c), dice_coef(&c), pixel_accuracy(&c), sensitivity(&c), specificity(&c)] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        prop_assert_eq!([jaccard(&c), dice_coef(&c), pixel_accuracy(&c), sensitivity(&c), specificity(&c)], metric_oracle(&c));
    }

    #[test]
    fn losses_and_metrics_ignore_pixel_order((pred, gt) in masks(10), seed in 0u64..1000) {
        let (pp, gg) = permuted(&pred, &gt, seed);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + a.abs());
        prop_assert!(close(dice_loss(&pred, &gt, 1.0).unwrap(), dice_loss(&pp, &gg, 1.0).unwrap()));
        prop_assert!(close(rank_loss(&pred, &gt, 5, 0.3).unwrap(), rank_loss(&pp, &gg, 5, 0.3).unwrap()));
        prop_assert!(close(cross_entropy_loss(&pred, &gt).unwrap(), cross_entropy_loss(&pp, &gg).unwrap()));
        prop_assert_eq!(confusion_counts(&pred, &gt, 0.5).unwrap(), confusion_counts(&pp, &gg, 0.5).unwrap());
    }

    #[test]
    fn hard_pixels_match_full_sort((pred, gt) in masks(10), k in 1usize..120) {
        prop_assert_eq!(select_hard_pixels(&pred, &gt, k).unwrap(), hard_pixel_oracle(&pred, &gt, k));
    }

    #[test]
    fn losses_are_nonnegative_and_finite((pred, gt) in masks(10)) {
        let params = HybridLossParams::default();
        for v in [
            dice_loss(&pred, &gt, 1.0).unwrap(),
            rank_loss(&pred, &gt, 30, 0.3).unwrap(),
            hybrid_loss(&pred, &gt, &params).unwrap(),
            cross_entropy_loss(&pred, &gt).unwrap(),
            focal_loss(&pred, &gt, 2.0, 0.25).unwrap(),
        ] {
            prop_assert!(v.is_finite() && v >= 0.0);
        }
        prop_assert!(dice_loss(&pred, &gt, 1.0).unwrap() <= 1.0);
    }

    #[test]
    fn hybrid_is_dice_plus_weighted_rank((pred, gt) in masks(10), lambda in 0.0f64..1.0) {
        let params = HybridLossParams { lambda_weight: lambda, ..HybridLossParams::default() };
        let h = hybrid_loss(&pred, &gt, &params).unwrap();
        let parts = dice_loss(&pred, &gt, params.epsilon).unwrap()
            + lambda * rank_loss(&pred, &gt, params.k_hard, params.margin).unwrap();
        prop_assert!((h - parts).abs() <= 1e-12);
    }

    #[test]
    fn auc_matches_pair_count(
        pairs in prop::collection::vec((0u8..10, prop::bool::ANY), 2..80)
    ) {
        let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64 / 10.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|p| p.1 as u8).collect();
        let both = labels.contains(&0) && labels.contains(&1);
        match roc_auc(&scores, &labels) {
            Ok(a) => {
                prop_assert!(both);
                prop_assert!((a - mann_whitney(&scores, &labels)).abs() <= 1e-12);
            }
            Err(e) => {
                prop_assert!(!both);
                prop_assert_eq!(e.exit_code(), 9);
            }
        }
    }
}

#[test]
fn empty_prediction_and_truth_score_perfectly() {
    let pred = ProbMask::new(3, 3, vec![0.1; 9]).unwrap();
    let gt = GroundTruthMask::new(3, 3, vec![0; 9]).unwrap();
    let c = confusion_counts(&pred, &gt, 0.5).unwrap();
    assert_eq!([jaccard(&c), dice_coef(&c), sensitivity(&c)], [1.0, 1.0, 1.0]);
    assert_eq!(rank_loss(&pred, &gt, 4, 0.3).unwrap(), 0.0);
}

#[test]
fn shape_mismatch_is_a_contract_error() {
    let pred = ProbMask::new(2, 3, vec![0.5; 6]).unwrap();
    let gt = GroundTruthMask::new(3, 2, vec![0; 6]).unwrap();
    assert_eq!(dice_loss(&pred, &gt, 1.0).unwrap_err().exit_code(), 4);
    assert_eq!(confusion_counts(&pred, &gt, 0.5).unwrap_err().exit_code(), 4);
    assert!(ProbMask::new(1, 2, vec![0.5, 1.5]).is_err());
    assert!(GroundTruthMask::new(1, 2, vec![0, 2]).is_err());
}
