//! Parameter sweeps, loss comparisons and k-fold fine-tuning.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, NetKind};
use crate::config::{LossKind, PipelineConfig};
use crate::data::{ClsSample, SegSample};
use crate::error::{Error, Result};
use crate::metrics::{ClsReport, SegScores};
use crate::rng::keyed_rng;

use super::train::{
    evaluate_classifier, evaluate_coarse, evaluate_enhanced, generate_cams, generate_masks, train_classifier,
    train_coarse, train_enhanced, ClassifierInit, EnhancedInit, StageSettings,
};
use super::{run_in_memory, Datasets, Pipeline, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    KHard,
    Margin,
    LambdaWeight,
    TrainFractionSeg,
    TrainFractionCls,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 5] = [
        SweepParameter::KHard,
        SweepParameter::Margin,
        SweepParameter::LambdaWeight,
        SweepParameter::TrainFractionSeg,
        SweepParameter::TrainFractionCls,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::KHard => "k_hard",
            SweepParameter::Margin => "margin",
            SweepParameter::LambdaWeight => "lambda_weight",
            SweepParameter::TrainFractionSeg => "train_fraction_seg",
            SweepParameter::TrainFractionCls => "train_fraction_cls",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
            Error::Usage(format!("unknown sweep parameter '{name}' (expected one of {})", names.join(", ")))
        })
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            SweepParameter::KHard => vec![10.0, 30.0, 50.0, 100.0, 150.0],
            SweepParameter::Margin => vec![0.1, 0.2, 0.3, 0.4],
            SweepParameter::LambdaWeight => vec![0.01, 0.05, 0.1, 0.5],
            SweepParameter::TrainFractionSeg | SweepParameter::TrainFractionCls => vec![0.25, 0.5, 0.75, 1.0],
        }
    }

    pub fn metric_names(self) -> &'static [&'static str] {
        match self {
            SweepParameter::KHard | SweepParameter::Margin | SweepParameter::LambdaWeight => &["val_ja", "test_ja"],
            SweepParameter::TrainFractionSeg => &["coarse_test_ja", "enhanced_test_ja"],
            SweepParameter::TrainFractionCls => &[
                "val_accuracy_mask",
                "val_accuracy_no_mask",
                "test_auc_mask",
                "test_auc_no_mask",
            ],
        }
    }

    /// Returns a copy of `config` with the parameter set to `value`.
    pub fn apply(self, config: &PipelineConfig, value: f64) -> Result<PipelineConfig> {
        let mut c = config.clone();
        match self {
            SweepParameter::KHard => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::config(format!("k_hard must be a positive integer, got {value}")));
                }
                c.loss.k_hard = value as usize;
            }
            SweepParameter::Margin => c.loss.margin = value,
            SweepParameter::LambdaWeight => c.loss.lambda_weight = value,
            SweepParameter::TrainFractionSeg => c.data.train_fraction_seg = value,
            SweepParameter::TrainFractionCls => c.data.train_fraction_cls = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub metrics: BTreeMap<String, f64>,
    /// Failure message when the cell could not be run.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub metric_names: Vec<String>,
    pub rows: Vec<SweepRow>,
}

fn sweep_cell(parameter: SweepParameter, config: &PipelineConfig, full: &Datasets) -> Result<BTreeMap<String, f64>> {
    let data = full
        .clone()
        .with_train_fractions(config.data.train_fraction_seg, config.data.train_fraction_cls);
    let mut m = BTreeMap::new();
    match parameter {
        SweepParameter::KHard | SweepParameter::Margin | SweepParameter::LambdaWeight => {
            let o = train_coarse(
                &data.seg_train,
                &data.seg_val,
                config,
                None,
                &StageSettings::segmentation(config, Stage::TrainCoarse.name()),
            )?;
            m.insert("val_ja".into(), o.best_metric());
            m.insert("test_ja".into(), evaluate_coarse(&o.checkpoint, &data.seg_test, config)?.mean.ja);
        }
        SweepParameter::TrainFractionSeg => {
            let run = run_in_memory(config, &data)?;
            let reports = run.final_reports(config, &data)?;
            m.insert("coarse_test_ja".into(), reports.coarse.mean.ja);
            m.insert("enhanced_test_ja".into(), reports.enhanced.mean.ja);
        }
        SweepParameter::TrainFractionCls => {
            let coarse = train_coarse(
                &data.seg_train,
                &data.seg_val,
                config,
                None,
                &StageSettings::segmentation(config, Stage::TrainCoarse.name()),
            )?;
            let masks = generate_masks(&coarse.checkpoint, data.all_cls().map(|s| (s.id.as_str(), &s.image)), config)?;
            for (suffix, no_mask) in [("mask", false), ("no_mask", true)] {
                let mut c = config.clone();
                c.stages.no_mask = no_mask;
                let o = train_classifier(
                    &data.cls_train,
                    &data.cls_val,
                    Some(&masks),
                    &c,
                    ClassifierInit::Fresh {
                        coarse: Some(&coarse.checkpoint),
                    },
                    &StageSettings::classification(&c, Stage::TrainClassifier.name()),
                )?;
                m.insert(format!("val_accuracy_{suffix}"), o.best_metric());
                let r = evaluate_classifier(&o.checkpoint, &data.cls_test, Some(&masks), &c)?;
                m.insert(format!("test_auc_{suffix}"), r.average_auc);
            }
        }
    }
    Ok(m)
}

/// Runs the stages `parameter` affects once per value with a shared seed.
/// A failing cell is recorded and the sweep continues.
pub fn sweep(config: &PipelineConfig, data: &Datasets, parameter: SweepParameter, values: &[f64]) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Usage("a sweep needs at least one value".into()));
    }
    let rows = values
        .iter()
        .map(|&value| {
            let cell = parameter.apply(config, value).and_then(|c| sweep_cell(parameter, &c, data));
            match cell {
                Ok(metrics) => SweepRow {
                    value,
                    metrics,
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell {}={value} failed: {e}", parameter.name());
                    SweepRow {
                        value,
                        metrics: BTreeMap::new(),
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(SweepTable {
        parameter,
        metric_names: parameter.metric_names().iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub loss: String,
    /// Test-split mean scores.
    pub scores: Option<SegScores>,
    pub val_ja: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTable {
    pub rows: Vec<LossRow>,
}

/// Trains the coarse segmenter once per loss on shared data and seed.
pub fn compare_losses(config: &PipelineConfig, data: &Datasets, losses: &[LossKind]) -> Result<LossTable> {
    if losses.is_empty() {
        return Err(Error::Usage("at least one loss is required".into()));
    }
    let rows = losses
        .iter()
        .map(|&kind| {
            let mut c = config.clone();
            c.loss.kind = kind;
            let name = c.loss.seg_loss().name().to_string();
            let cell = c.validate().and_then(|_| {
                let o = train_coarse(
                    &data.seg_train,
                    &data.seg_val,
                    &c,
                    None,
                    &StageSettings::segmentation(&c, Stage::TrainCoarse.name()),
                )?;
                let r = evaluate_coarse(&o.checkpoint, &data.seg_test, &c)?;
                Ok((r.mean, o.best_metric()))
            });
            match cell {
                Ok((scores, val)) => LossRow {
                    loss: name,
                    scores: Some(scores),
                    val_ja: Some(val),
                    error: None,
                },
                Err(e) => LossRow {
                    loss: name,
                    scores: None,
                    val_ja: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(LossTable { rows })
}

/// Fold index of every item: a seeded permutation dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64, key: &str) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::config("at least two folds are required"));
    }
    if n < folds {
        return Err(Error::config(format!("{n} samples cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut keyed_rng(seed, &["folds".into(), key.into()]));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    Ok(fold)
}

/// The three trained networks of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct Pretrained {
    pub coarse: Checkpoint,
    pub classifier: Checkpoint,
    pub enhanced: Checkpoint,
}

impl Pretrained {
    /// Reads the checkpoints of a completed run directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let state_path = dir.join(super::STATE_FILE);
        if !state_path.exists() {
            return Err(Error::StageOrder(format!("{} holds no pipeline run", dir.display())));
        }
        let state: super::PipelineState = crate::checkpoint::read_json(&state_path)?;
        for s in [Stage::TrainCoarse, Stage::TrainClassifier, Stage::TrainEnhanced] {
            if !state.is_complete(s) {
                return Err(Error::StageOrder(format!("{} has not completed {s}", dir.display())));
            }
        }
        let load = |s: Stage, kind: NetKind| -> Result<Checkpoint> {
            let c = Checkpoint::load(&dir.join(&state.record(s).artifact))?;
            c.expect_kind(kind)?;
            Ok(c)
        };
        Ok(Self {
            coarse: load(Stage::TrainCoarse, NetKind::Coarse)?,
            classifier: load(Stage::TrainClassifier, NetKind::Classifier)?,
            enhanced: load(Stage::TrainEnhanced, NetKind::Enhanced)?,
        })
    }

    pub fn from_pipeline(p: &Pipeline) -> Result<Self> {
        Ok(Self {
            coarse: p.checkpoint(Stage::TrainCoarse)?,
            classifier: p.checkpoint(Stage::TrainClassifier)?,
            enhanced: p.checkpoint(Stage::TrainEnhanced)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScores {
    pub coarse: SegScores,
    pub enhanced: SegScores,
    pub classifier: Option<ClsReport>,
    /// Why the classification report is missing, if it is.
    pub classifier_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seg_test_ids: Vec<String>,
    pub cls_test_ids: Vec<String>,
    pub zero_shot: FoldScores,
    pub fine_tuned: FoldScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneReport {
    pub folds: Vec<FoldReport>,
    pub mean_zero_shot_ja: f64,
    pub mean_fine_tuned_ja: f64,
}

fn pick<T: Clone>(items: &[T], fold: &[usize], keep: impl Fn(usize) -> bool) -> Vec<T> {
    items.iter().zip(fold).filter(|(_, &f)| keep(f)).map(|(x, _)| x.clone()).collect()
}

fn fold_scores(
    config: &PipelineConfig,
    coarse: &Checkpoint,
    classifier: &Checkpoint,
    enhanced: &Checkpoint,
    seg_test: &[SegSample],
    cls_test: &[ClsSample],
) -> Result<FoldScores> {
    let cams = generate_cams(classifier, coarse, seg_test, config)?;
    let masks = generate_masks(coarse, cls_test.iter().map(|s| (s.id.as_str(), &s.image)), config)?;
    let (cls, note) = match evaluate_classifier(classifier, cls_test, Some(&masks), config) {
        Ok(r) => (Some(r), None),
        Err(e @ Error::UndefinedMetric(_)) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(FoldScores {
        coarse: evaluate_coarse(coarse, seg_test, config)?.mean,
        enhanced: evaluate_enhanced(enhanced, seg_test, &cams, config)?.mean,
        classifier: cls,
        classifier_note: note,
    })
}

/// K-fold adaptation of pretrained networks to new data. For each fold the
/// held-out part is the test set, the next fold validates, and the rest
/// trains; with two folds the training part also validates.
pub fn fine_tune(config: &PipelineConfig, pretrained: &Pretrained, data: &Datasets, num_folds: usize) -> Result<FineTuneReport> {
    let seg: Vec<SegSample> = data.all_seg().cloned().collect();
    let cls: Vec<ClsSample> = data.all_cls().cloned().collect();
    let seg_fold = fold_assignment(seg.len(), num_folds, config.seed, "seg")?;
    let cls_fold = fold_assignment(cls.len(), num_folds, config.seed, "cls")?;
    let epochs = config.stages.fine_tune_epochs;
    let mut folds = Vec::with_capacity(num_folds);
    for f in 0..num_folds {
        let val_fold = if num_folds >= 3 { (f + 1) % num_folds } else { f };
        let is_train = |g: usize| g != f && (num_folds < 3 || g != val_fold);
        let is_val = |g: usize| if num_folds >= 3 { g == val_fold } else { g != f };
        let seg_train = pick(&seg, &seg_fold, is_train);
        let seg_val = pick(&seg, &seg_fold, is_val);
        let seg_test = pick(&seg, &seg_fold, |g| g == f);
        let cls_train = pick(&cls, &cls_fold, is_train);
        let cls_val = pick(&cls, &cls_fold, is_val);
        let cls_test = pick(&cls, &cls_fold, |g| g == f);
        log::info!("fine-tuning fold {f}: {} / {} / {} segmentation images", seg_train.len(), seg_val.len(), seg_test.len());

        let zero_shot = fold_scores(
            config,
            &pretrained.coarse,
            &pretrained.classifier,
            &pretrained.enhanced,
            &seg_test,
            &cls_test,
        )?;

        let settings = |name: &str, seg: bool| {
            let n = format!("fine_tune_{name}_fold{f}");
            let s = if seg {
                StageSettings::segmentation(config, &n)
            } else {
                StageSettings::classification(config, &n)
            };
            s.with_max_epochs(epochs)
        };
        let coarse = train_coarse(&seg_train, &seg_val, config, Some(&pretrained.coarse), &settings("coarse", true))?;
        let masks = generate_masks(&coarse.checkpoint, cls.iter().map(|s| (s.id.as_str(), &s.image)), config)?;
        let classifier = train_classifier(
            &cls_train,
            &cls_val,
            Some(&masks),
            config,
            ClassifierInit::Resume(&pretrained.classifier),
            &settings("classifier", false),
        )?;
        let seg_fit = pick(&seg, &seg_fold, |g| g != f);
        let cams = generate_cams(&classifier.checkpoint, &coarse.checkpoint, &seg_fit, config)?;
        let enhanced = train_enhanced(
            &seg_train,
            &seg_val,
            &cams,
            config,
            EnhancedInit::Resume(&pretrained.enhanced),
            &settings("enhanced", true),
        )?;
        let fine_tuned = fold_scores(
            config,
            &coarse.checkpoint,
            &classifier.checkpoint,
            &enhanced.checkpoint,
            &seg_test,
            &cls_test,
        )?;
        folds.push(FoldReport {
            fold: f,
            seg_test_ids: seg_test.iter().map(|s| s.id.clone()).collect(),
            cls_test_ids: cls_test.iter().map(|s| s.id.clone()).collect(),
            zero_shot,
            fine_tuned,
        });
    }
    let mean = |f: fn(&FoldReport) -> f64| folds.iter().map(f).sum::<f64>() / folds.len() as f64;
    Ok(FineTuneReport {
        mean_zero_shot_ja: mean(|r| r.zero_shot.enhanced.ja),
        mean_fine_tuned_ja: mean(|r| r.fine_tuned.enhanced.ja),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_exactly() {
        let f = fold_assignment(11, 4, 3, "seg").unwrap();
        let mut sizes = [0; 4];
        f.iter().for_each(|&g| sizes[g] += 1);
        assert_eq!(sizes.iter().sum::<usize>(), 11);
        assert!(sizes.iter().all(|&s| s == 2 || s == 3));
        assert_eq!(f, fold_assignment(11, 4, 3, "seg").unwrap());
        assert!(matches!(fold_assignment(3, 4, 0, "seg"), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_parameters_parse_and_apply() {
        let c = PipelineConfig::synthetic_desk();
        for p in SweepParameter::ALL {
            assert_eq!(SweepParameter::parse(p.name()).unwrap(), p);
        }
        assert_eq!(SweepParameter::KHard.apply(&c, 50.0).unwrap().loss.k_hard, 50);
        assert!(SweepParameter::KHard.apply(&c, 2.5).is_err());
        assert!(SweepParameter::Margin.apply(&c, 2.0).is_err());
        assert_eq!(SweepParameter::KHard.default_values(), vec![10.0, 30.0, 50.0, 100.0, 150.0]);
        assert_eq!(SweepParameter::Margin.default_values(), vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(SweepParameter::LambdaWeight.default_values(), vec![0.01, 0.05, 0.1, 0.5]);
    }
}
