mod common;

use std::collections::BTreeSet;

use common::*;
use mbdcnn::config::LossKind;
use mbdcnn::data::AugmentationConfig;
use mbdcnn::pipeline::*;
use mbdcnn::Error;

#[test]
fn stages_refuse_to_run_before_their_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(tiny(1), dir.path()).unwrap();
    for stage in [Stage::GenerateMasks, Stage::TrainClassifier, Stage::GenerateCams, Stage::TrainEnhanced] {
        assert!(matches!(p.run_stage(stage), Err(Error::StageOrder(_))), "{stage}");
    }
    assert!(matches!(p.checkpoint(Stage::TrainCoarse), Err(Error::StageOrder(_))));
    assert!(matches!(p.final_reports(), Err(Error::StageOrder(_))));
}

#[test]
fn rerunning_a_stage_invalidates_what_follows() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(tiny(2), dir.path()).unwrap();
    p.run(None).unwrap();
    assert!(p.state.all_complete());
    p.run_stage(Stage::GenerateMasks).unwrap();
    assert!(p.state.is_complete(Stage::TrainCoarse) && p.state.is_complete(Stage::GenerateMasks));
    for s in [Stage::TrainClassifier, Stage::GenerateCams, Stage::TrainEnhanced] {
        assert!(!p.state.is_complete(s), "{s}");
    }
    assert!(matches!(p.run_stage(Stage::TrainEnhanced), Err(Error::StageOrder(_))));
}

#[test]
fn a_single_sweep_value_reproduces_the_plain_stage() {
    let config = tiny(3);
    let data = Datasets::load(&config).unwrap();
    let table = sweep(&config, &data, SweepParameter::KHard, &[config.loss.k_hard as f64]).unwrap();
    let losses = compare_losses(&config, &data, &[LossKind::Hybrid]).unwrap();
    let row = &table.rows[0];
    assert_eq!(row.error, None);
    assert_eq!(row.metrics["val_ja"], losses.rows[0].val_ja.unwrap());
    assert_eq!(row.metrics["test_ja"], losses.rows[0].scores.as_ref().unwrap().ja);
    let run = run_in_memory(&config, &data).unwrap();
    assert_eq!(run.coarse.best_metric(), row.metrics["val_ja"]);
}

#[test]
fn invalid_sweep_cells_are_recorded_not_fatal() {
    let config = tiny(4);
    let data = Datasets::load(&config).unwrap();
    let table = sweep(&config, &data, SweepParameter::Margin, &[-1.0]).unwrap();
    assert!(table.rows[0].error.is_some());
    assert!(table.rows[0].metrics.is_empty());
}

#[test]
fn hybrid_without_rank_term_trains_exactly_like_dice() {
    let mut config = tiny(5);
    config.loss.lambda_weight = 0.0;
    let data = Datasets::load(&config).unwrap();
    let t = compare_losses(&config, &data, &[LossKind::Dice, LossKind::Hybrid]).unwrap();
    assert_ne!(t.rows[0].loss, t.rows[1].loss);
    assert_eq!(t.rows[0].scores, t.rows[1].scores);
    assert_eq!(t.rows[0].val_ja, t.rows[1].val_ja);
}

#[test]
fn fine_tuning_folds_partition_the_data() {
    let config = tiny(6);
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::open(config.clone(), dir.path()).unwrap();
    p.run(None).unwrap();
    let models = Pretrained::from_pipeline(&p).unwrap();
    assert_eq!(models, Pretrained::load(dir.path()).unwrap());
    let r = fine_tune(&config, &models, &p.data, 3).unwrap();
    assert_eq!(r.folds.len(), 3);
    let mut seen = BTreeSet::new();
    for f in &r.folds {
        assert!(!f.seg_test_ids.is_empty());
        for id in &f.seg_test_ids {
            assert!(seen.insert(id.clone()), "{id} tested twice");
        }
    }
    let all: BTreeSet<String> = p.data.all_seg().map(|s| s.id.clone()).collect();
    assert_eq!(seen, all);
    let mean = r.folds.iter().map(|f| f.fine_tuned.enhanced.ja).sum::<f64>() / 3.0;
    assert_eq!(mean, r.mean_fine_tuned_ja);
}

#[test]
fn coarse_segmenter_overfits_one_image() {
    let config = desk(7);
    let data = Datasets::load(&config).unwrap();
    let one = vec![data.seg_train[0].clone()];
    let settings = StageSettings {
        patience: 200,
        augment: AugmentationConfig::identity(config.augment.target_size),
        ..StageSettings::segmentation(&config, "overfit").with_max_epochs(200)
    };
    let o = train_coarse(&one, &one, &config, None, &settings).unwrap();
    let first = o.curve[0].train_loss;
    let last = o.curve.last().unwrap().train_loss;
    assert!(last < 0.3 * first, "loss {first} -> {last}");
    assert!(o.best_metric() > 0.9, "JA {}", o.best_metric());
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let config = tiny(8);
    let data = Datasets::load(&config).unwrap();
    let settings = StageSettings {
        patience: 2,
        ..StageSettings::segmentation(&config, "early").with_max_epochs(12)
    };
    let o = train_coarse(&data.seg_train, &data.seg_val, &config, None, &settings).unwrap();
    let best = o.curve.iter().map(|r| r.val_metric).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(o.best_metric(), best);
    assert_eq!(o.checkpoint.meta.metric, best);
    assert!(o.curve.len() <= 12);
    assert!(o.curve.len() - o.best_epoch() <= 3);
    let again = evaluate_coarse(&o.checkpoint, &data.seg_val, &config).unwrap().mean.ja;
    assert!((again - best).abs() <= 1e-6);
}

#[test]
fn diverging_training_is_reported() {
    let config = tiny(9);
    let data = Datasets::load(&config).unwrap();
    let settings = StageSettings {
        adam: (1e30, 0.9, 0.999, 0.0),
        ..StageSettings::segmentation(&config, "diverge").with_max_epochs(3)
    };
    let e = train_coarse(&data.seg_train, &data.seg_val, &config, None, &settings).unwrap_err();
    assert_eq!(e.exit_code(), 7, "{e}");
}
