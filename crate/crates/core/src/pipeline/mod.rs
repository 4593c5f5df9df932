//! The five-stage protocol: coarse segmenter, coarse masks, mask classifier,
//! localization maps, enhanced segmenter. Runs either in memory
//! ([`run_in_memory`]) or against an output directory with a resumable state
//! manifest ([`Pipeline`]).

mod artifacts;
mod experiments;
mod train;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use artifacts::{MapEntry, MapKind, MapSet};
pub use experiments::{
    compare_losses, fine_tune, fold_assignment, sweep, FineTuneReport, FoldReport, FoldScores, LossRow, LossTable,
    Pretrained, SweepParameter, SweepRow, SweepTable,
};
pub use train::{
    classifier_probs, evaluate_classifier, evaluate_coarse, evaluate_enhanced, generate_cams, generate_masks,
    predict_classifier, predict_coarse, predict_enhanced, prob_mask_at, score_segmentation, train_classifier,
    train_coarse, train_enhanced, ClassifierInit, EnhancedInit, EpochRecord, StageSettings, TrainOutcome,
};

use crate::checkpoint::{read_json, write_json, Checkpoint, NetKind};
use crate::config::{DataSource, PipelineConfig};
use crate::data::{preprocess, resize_mask, generate_synthetic_dataset, list_image_ids, load_cls_dataset, load_seg_dataset, ClsSample, SegSample, LABELS_FILE};
use crate::error::{Error, Result};
use crate::metrics::{ClsReport, SegReport};
use crate::report::OverlayPanel;
use crate::rng::{derive_seed, Key};

pub const STATE_FILE: &str = "state.json";
pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.toml";

/// Train / validation / test splits of both datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub seg_train: Vec<SegSample>,
    pub seg_val: Vec<SegSample>,
    pub seg_test: Vec<SegSample>,
    pub cls_train: Vec<ClsSample>,
    pub cls_val: Vec<ClsSample>,
    pub cls_test: Vec<ClsSample>,
    pub class_names: Vec<String>,
}

fn split<T>(mut items: Vec<T>, counts: [usize; 3], what: &str) -> Result<[Vec<T>; 3]> {
    let need: usize = counts.iter().sum();
    if need > items.len() {
        return Err(Error::config(format!(
            "{what} split {counts:?} needs {need} samples but only {} are available",
            items.len()
        )));
    }
    items.truncate(need);
    let test = items.split_off(counts[0] + counts[1]);
    let val = items.split_off(counts[0]);
    Ok([items, val, test])
}

fn fraction_len(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1))
}

impl Datasets {
    /// Loads the configured data at full training size.
    pub fn load(config: &PipelineConfig) -> Result<Self> {
        let (seg, cls, class_names) = match config.data.source {
            DataSource::Synthetic => {
                let ds = generate_synthetic_dataset(&config.synthetic_config())?;
                let names = ds.class_names.clone();
                let (seg, cls) = ds.into_parts();
                (seg, cls, names)
            }
            DataSource::Disk => {
                let d = &config.data;
                let ids = list_image_ids(&d.seg_root)?;
                let seg = load_seg_dataset(&d.seg_root, &ids)?;
                let cls = load_cls_dataset(&d.cls_root, &d.cls_root.join(LABELS_FILE), &d.class_names)?;
                (seg, cls, d.class_names.clone())
            }
        };
        let [seg_train, seg_val, seg_test] = split(seg, config.data.seg_split, "segmentation")?;
        let [cls_train, cls_val, cls_test] = split(cls, config.data.cls_split, "classification")?;
        Ok(Self {
            seg_train,
            seg_val,
            seg_test,
            cls_train,
            cls_val,
            cls_test,
            class_names,
        })
    }

    /// Loads and keeps the configured fraction of each training split.
    pub fn load_for_run(config: &PipelineConfig) -> Result<Self> {
        Ok(Self::load(config)?.with_train_fractions(config.data.train_fraction_seg, config.data.train_fraction_cls))
    }

    /// Keeps the leading `ceil(fraction · n)` training samples of each set.
    pub fn with_train_fractions(mut self, seg: f64, cls: f64) -> Self {
        let n = fraction_len(self.seg_train.len(), seg);
        self.seg_train.truncate(n);
        let n = fraction_len(self.cls_train.len(), cls);
        self.cls_train.truncate(n);
        self
    }

    pub fn all_seg(&self) -> impl Iterator<Item = &SegSample> {
        self.seg_train.iter().chain(&self.seg_val).chain(&self.seg_test)
    }

    pub fn all_cls(&self) -> impl Iterator<Item = &ClsSample> {
        self.cls_train.iter().chain(&self.cls_val).chain(&self.cls_test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    TrainCoarse,
    GenerateMasks,
    TrainClassifier,
    GenerateCams,
    TrainEnhanced,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::TrainCoarse,
        Stage::GenerateMasks,
        Stage::TrainClassifier,
        Stage::GenerateCams,
        Stage::TrainEnhanced,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainCoarse => "train_coarse",
            Stage::GenerateMasks => "generate_masks",
            Stage::TrainClassifier => "train_classifier",
            Stage::GenerateCams => "generate_cams",
            Stage::TrainEnhanced => "train_enhanced",
        }
    }

    pub fn index(self) -> usize {
        Stage::ALL.iter().position(|&s| s == self).expect("listed")
    }

    /// Artifact location relative to the output directory.
    pub fn artifact_dir(self) -> &'static str {
        match self {
            Stage::TrainCoarse => "checkpoints/coarse",
            Stage::GenerateMasks => "masks",
            Stage::TrainClassifier => "checkpoints/classifier",
            Stage::GenerateCams => "cams",
            Stage::TrainEnhanced => "checkpoints/enhanced",
        }
    }

    pub fn trains(self) -> bool {
        matches!(self, Stage::TrainCoarse | Stage::TrainClassifier | Stage::TrainEnhanced)
    }

    pub fn parse(name: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| Error::Usage(format!("unknown stage '{name}'")))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub complete: bool,
    /// Relative path of the stage's checkpoint or map set.
    pub artifact: String,
    /// Relative path of the training curve, for training stages.
    pub curve: Option<String>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
    pub items: Option<usize>,
}

/// On-disk progress manifest of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    /// Fingerprint of the effective configuration the artifacts belong to.
    pub config_digest: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
}

impl PipelineState {
    pub fn fresh(config: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            config_digest: config_digest(config)?,
            seed: config.seed,
            stages: Stage::ALL
                .iter()
                .map(|&stage| StageRecord {
                    stage,
                    complete: false,
                    artifact: stage.artifact_dir().to_string(),
                    curve: stage.trains().then(|| format!("curves/{}.csv", stage.name())),
                    best_epoch: None,
                    best_metric: None,
                    items: None,
                })
                .collect(),
        })
    }

    pub fn record(&self, stage: Stage) -> &StageRecord {
        &self.stages[stage.index()]
    }

    fn record_mut(&mut self, stage: Stage) -> &mut StageRecord {
        &mut self.stages[stage.index()]
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        self.record(stage).complete
    }

    pub fn all_complete(&self) -> bool {
        self.stages.iter().all(|r| r.complete)
    }
}

/// Hash of the configuration, ignoring where the output goes.
pub fn config_digest(config: &PipelineConfig) -> Result<String> {
    let mut c = config.clone();
    c.output_dir = PathBuf::new();
    let text = c.to_toml()?;
    Ok(format!("{:016x}", derive_seed(0, &[Key::Str(&text)])))
}

/// Everything a finished run produced, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub coarse: TrainOutcome,
    pub masks: MapSet,
    pub classifier: TrainOutcome,
    pub cams: MapSet,
    pub enhanced: TrainOutcome,
}

/// Test-split evaluation of a finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReports {
    pub coarse: SegReport,
    pub enhanced: SegReport,
    pub classifier: ClsReport,
}

fn cls_ids(data: &Datasets) -> impl Iterator<Item = (&str, &crate::data::Image)> {
    data.all_cls().map(|s| (s.id.as_str(), &s.image))
}

/// Runs all five stages without touching the disk.
pub fn run_in_memory(config: &PipelineConfig, data: &Datasets) -> Result<RunArtifacts> {
    let seg = |s: Stage| StageSettings::segmentation(config, s.name());
    let coarse = train_coarse(&data.seg_train, &data.seg_val, config, None, &seg(Stage::TrainCoarse))?;
    let masks = generate_masks(&coarse.checkpoint, cls_ids(data), config)?;
    let classifier = train_classifier(
        &data.cls_train,
        &data.cls_val,
        Some(&masks),
        config,
        ClassifierInit::Fresh {
            coarse: Some(&coarse.checkpoint),
        },
        &StageSettings::classification(config, Stage::TrainClassifier.name()),
    )?;
    let seg_all: Vec<SegSample> = data.all_seg().cloned().collect();
    let cams = generate_cams(&classifier.checkpoint, &coarse.checkpoint, &seg_all, config)?;
    let enhanced = train_enhanced(
        &data.seg_train,
        &data.seg_val,
        &cams,
        config,
        EnhancedInit::FromCoarse(&coarse.checkpoint),
        &seg(Stage::TrainEnhanced),
    )?;
    Ok(RunArtifacts {
        coarse,
        masks,
        classifier,
        cams,
        enhanced,
    })
}

impl RunArtifacts {
    pub fn final_reports(&self, config: &PipelineConfig, data: &Datasets) -> Result<FinalReports> {
        Ok(FinalReports {
            coarse: evaluate_coarse(&self.coarse.checkpoint, &data.seg_test, config)?,
            enhanced: evaluate_enhanced(&self.enhanced.checkpoint, &data.seg_test, &self.cams, config)?,
            classifier: evaluate_classifier(&self.classifier.checkpoint, &data.cls_test, Some(&self.masks), config)?,
        })
    }
}

/// A run bound to an output directory.
#[derive(Debug)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub dir: PathBuf,
    pub data: Datasets,
    pub state: PipelineState,
}

impl Pipeline {
    /// Opens `dir`, resuming its state when the configuration matches, and
    /// echoes the effective configuration into it.
    pub fn open(config: PipelineConfig, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let state_path = dir.join(STATE_FILE);
        let state = if state_path.exists() {
            let state: PipelineState = read_json(&state_path)?;
            if state.config_digest != config_digest(&config)? {
                return Err(Error::config(format!(
                    "{} belongs to a run with a different configuration; use a fresh output directory",
                    dir.display()
                )));
            }
            state
        } else {
            PipelineState::fresh(&config)?
        };
        let path = dir.join(EFFECTIVE_CONFIG_FILE);
        fs::write(&path, config.to_toml()?).map_err(|e| Error::io(&path, e))?;
        let data = Datasets::load_for_run(&config)?;
        let p = Self {
            config,
            dir: dir.to_path_buf(),
            data,
            state,
        };
        p.save_state()?;
        Ok(p)
    }

    fn save_state(&self) -> Result<()> {
        write_json(&self.dir.join(STATE_FILE), &self.state)
    }

    fn artifact_path(&self, stage: Stage) -> PathBuf {
        self.dir.join(&self.state.record(stage).artifact)
    }

    fn upstream(&self, stage: Stage) -> Result<()> {
        for &s in &Stage::ALL[..stage.index()] {
            if !self.state.is_complete(s) || !self.artifact_path(s).exists() {
                return Err(Error::StageOrder(format!(
                    "{stage} needs the artifacts of {s}, which has not completed in {}",
                    self.dir.display()
                )));
            }
        }
        Ok(())
    }

    /// Loads the checkpoint written by a completed training stage.
    pub fn checkpoint(&self, stage: Stage) -> Result<Checkpoint> {
        let kind = match stage {
            Stage::TrainCoarse => NetKind::Coarse,
            Stage::TrainClassifier => NetKind::Classifier,
            Stage::TrainEnhanced => NetKind::Enhanced,
            other => return Err(Error::contract(format!("{other} does not produce a checkpoint"))),
        };
        if !self.state.is_complete(stage) {
            return Err(Error::StageOrder(format!("{stage} has not completed")));
        }
        let ckpt = Checkpoint::load(&self.artifact_path(stage))?;
        ckpt.expect_kind(kind)?;
        Ok(ckpt)
    }

    pub fn maps(&self, stage: Stage) -> Result<MapSet> {
        if !matches!(stage, Stage::GenerateMasks | Stage::GenerateCams) {
            return Err(Error::contract(format!("{stage} does not produce maps")));
        }
        if !self.state.is_complete(stage) {
            return Err(Error::StageOrder(format!("{stage} has not completed")));
        }
        MapSet::load(&self.artifact_path(stage))
    }

    pub fn curve(&self, stage: Stage) -> Result<Vec<EpochRecord>> {
        let rel = self.state.record(stage).curve.clone().ok_or_else(|| Error::contract(format!("{stage} has no curve")))?;
        crate::report::read_curve(&self.dir.join(rel))
    }

    /// Runs one stage, replacing its artifacts and invalidating later stages.
    pub fn run_stage(&mut self, stage: Stage) -> Result<()> {
        self.upstream(stage)?;
        log::info!("running {stage}");
        let config = self.config.clone();
        let data = &self.data;
        let out = self.artifact_path(stage);
        let (outcome, items) = match stage {
            Stage::TrainCoarse => {
                let o = train_coarse(
                    &data.seg_train,
                    &data.seg_val,
                    &config,
                    None,
                    &StageSettings::segmentation(&config, stage.name()),
                )?;
                (Some(o), None)
            }
            Stage::GenerateMasks => {
                let coarse = self.checkpoint(Stage::TrainCoarse)?;
                let masks = generate_masks(&coarse, cls_ids(data), &config)?;
                replace_dir(&out)?;
                masks.save(&out)?;
                (None, Some(masks.len()))
            }
            Stage::TrainClassifier => {
                let coarse = self.checkpoint(Stage::TrainCoarse)?;
                let masks = self.maps(Stage::GenerateMasks)?;
                let o = train_classifier(
                    &data.cls_train,
                    &data.cls_val,
                    Some(&masks),
                    &config,
                    ClassifierInit::Fresh { coarse: Some(&coarse) },
                    &StageSettings::classification(&config, stage.name()),
                )?;
                (Some(o), None)
            }
            Stage::GenerateCams => {
                let coarse = self.checkpoint(Stage::TrainCoarse)?;
                let cls = self.checkpoint(Stage::TrainClassifier)?;
                let seg_all: Vec<SegSample> = data.all_seg().cloned().collect();
                let cams = generate_cams(&cls, &coarse, &seg_all, &config)?;
                replace_dir(&out)?;
                cams.save(&out)?;
                (None, Some(cams.len()))
            }
            Stage::TrainEnhanced => {
                let coarse = self.checkpoint(Stage::TrainCoarse)?;
                let cams = self.maps(Stage::GenerateCams)?;
                let o = train_enhanced(
                    &data.seg_train,
                    &data.seg_val,
                    &cams,
                    &config,
                    EnhancedInit::FromCoarse(&coarse),
                    &StageSettings::segmentation(&config, stage.name()),
                )?;
                (Some(o), None)
            }
        };
        if let Some(o) = &outcome {
            replace_dir(&out)?;
            o.checkpoint.save(&out)?;
            let rel = self.state.record(stage).curve.clone().expect("training stages have curves");
            crate::report::write_curve(&self.dir.join(rel), &o.curve)?;
        }
        for later in &Stage::ALL[stage.index()..] {
            self.state.record_mut(*later).complete = false;
        }
        let rec = self.state.record_mut(stage);
        rec.complete = true;
        rec.best_epoch = outcome.as_ref().map(|o| o.best_epoch());
        rec.best_metric = outcome.as_ref().map(|o| o.best_metric());
        rec.items = items;
        self.save_state()
    }

    /// Runs every incomplete stage in order, optionally stopping after
    /// `stop_after`.
    pub fn run(&mut self, stop_after: Option<Stage>) -> Result<()> {
        for stage in Stage::ALL {
            if !self.state.is_complete(stage) {
                self.run_stage(stage)?;
            }
            if Some(stage) == stop_after {
                break;
            }
        }
        Ok(())
    }

    pub fn overlay_panels(&self, n: usize) -> Result<Vec<OverlayPanel>> {
        self.upstream(Stage::TrainEnhanced)?;
        overlay_panels(
            &self.config,
            &self.data.seg_test,
            &self.checkpoint(Stage::TrainCoarse)?,
            &self.checkpoint(Stage::TrainEnhanced)?,
            &self.maps(Stage::GenerateCams)?,
            n,
        )
    }

    /// Training curves of the completed training stages.
    pub fn curves(&self) -> Result<Vec<(String, Vec<EpochRecord>)>> {
        Stage::ALL
            .into_iter()
            .filter(|s| s.trains() && self.state.is_complete(*s))
            .map(|s| Ok((s.name().to_string(), self.curve(s)?)))
            .collect()
    }

    pub fn final_reports(&self) -> Result<FinalReports> {
        self.upstream(Stage::TrainEnhanced)?;
        let config = &self.config;
        let masks = self.maps(Stage::GenerateMasks)?;
        let cams = self.maps(Stage::GenerateCams)?;
        Ok(FinalReports {
            coarse: evaluate_coarse(&self.checkpoint(Stage::TrainCoarse)?, &self.data.seg_test, config)?,
            enhanced: evaluate_enhanced(&self.checkpoint(Stage::TrainEnhanced)?, &self.data.seg_test, &cams, config)?,
            classifier: evaluate_classifier(&self.checkpoint(Stage::TrainClassifier)?, &self.data.cls_test, Some(&masks), config)?,
        })
    }
}

/// Qualitative panels for the first `n` samples.
pub fn overlay_panels(
    config: &PipelineConfig,
    samples: &[SegSample],
    coarse: &Checkpoint,
    enhanced: &Checkpoint,
    cams: &MapSet,
    n: usize,
) -> Result<Vec<OverlayPanel>> {
    let picked = &samples[..n.min(samples.len())];
    let coarse_maps = predict_coarse(coarse, picked, config)?;
    let enhanced_maps = predict_enhanced(enhanced, picked, cams, config)?;
    let [th, tw] = config.augment.target_size;
    picked
        .iter()
        .zip(coarse_maps)
        .zip(enhanced_maps)
        .map(|((s, c), e)| {
            Ok(OverlayPanel {
                id: s.id.clone(),
                image: preprocess(&s.image, &config.augment),
                coarse: c,
                cam: cams.get(&s.id)?.channels[0].clone(),
                enhanced: e,
                truth: resize_mask(&s.mask, th, tw),
            })
        })
        .collect()
}

fn replace_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Runs (or resumes) the whole protocol in `dir` and evaluates it.
pub fn run_pipeline(config: PipelineConfig, dir: &Path) -> Result<(PipelineState, FinalReports)> {
    let mut p = Pipeline::open(config, dir)?;
    p.run(None)?;
    let reports = p.final_reports()?;
    Ok((p.state, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_takes_leading_counts_in_order() {
        let [a, b, c] = split((0..10).collect::<Vec<_>>(), [3, 2, 4], "x").unwrap();
        assert_eq!((a, b, c), (vec![0, 1, 2], vec![3, 4], vec![5, 6, 7, 8]));
        assert!(matches!(split(vec![1, 2], [1, 1, 1], "x"), Err(Error::Config(_))));
    }

    #[test]
    fn fractions_round_up_and_keep_one() {
        assert_eq!(fraction_len(200, 0.25), 50);
        assert_eq!(fraction_len(3, 0.1), 1);
        assert_eq!(fraction_len(10, 1.0), 10);
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(Stage::parse(s.name()).unwrap(), s);
        }
        assert!(Stage::parse("nope").is_err());
    }

    #[test]
    fn digest_ignores_output_dir() {
        let mut a = PipelineConfig::synthetic_desk();
        let d = config_digest(&a).unwrap();
        a.output_dir = "/elsewhere".into();
        assert_eq!(config_digest(&a).unwrap(), d);
        a.seed = 5;
        assert_ne!(config_digest(&a).unwrap(), d);
    }
}
