//! Training loops for the three networks and the stage operations built on
//! them: mask generation, localization-map generation and evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cam::{cam_for_sample, cams_all_classes, image_with_mask, resize_map};
use crate::checkpoint::{Checkpoint, CheckpointMeta, NetKind};
use crate::config::PipelineConfig;
use crate::data::{augment_cls, augment_rng, augment_seg, preprocess, resize_grid, AugmentationConfig, ClsSample, Image, SegSample};
use crate::error::{Error, Result};
use crate::losses::{batch_mean, GroundTruthMask, ProbMask, SegLoss, LOG_FLOOR};
use crate::metrics::{classification_summary, multiclass_accuracy, segmentation_report, ClsReport, SegReport};
use crate::networks::{build_coarse_sn, build_enhanced_sn, build_mask_cn, ClassifierNet, EnhancedNet, SegmentationNet};
use crate::nn::{Adam, Module};
use crate::rng::keyed_rng;
use crate::tensor::{Grid, Tensor};

use super::artifacts::{MapEntry, MapKind, MapSet};

/// Batch size for evaluation-mode forward passes.
const EVAL_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Weights of the best validation epoch.
    pub checkpoint: Checkpoint,
    pub curve: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best_metric(&self) -> f64 {
        self.checkpoint.meta.metric
    }

    pub fn best_epoch(&self) -> usize {
        self.checkpoint.meta.epoch
    }
}

/// Loop settings for one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSettings {
    /// Names the stage in RNG keys and error reports.
    pub name: String,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub adam: (f64, f64, f64, f64),
    pub augment: AugmentationConfig,
    pub threshold: f64,
}

impl StageSettings {
    pub fn segmentation(config: &PipelineConfig, name: &str) -> Self {
        Self::build(config, name, config.optim.batch_size_seg)
    }

    pub fn classification(config: &PipelineConfig, name: &str) -> Self {
        Self::build(config, name, config.optim.batch_size_cls)
    }

    fn build(config: &PipelineConfig, name: &str, batch_size: usize) -> Self {
        let o = &config.optim;
        Self {
            name: name.to_string(),
            seed: config.seed,
            max_epochs: o.max_epochs,
            patience: o.early_stop_patience,
            batch_size,
            adam: (o.learning_rate, o.beta1, o.beta2, o.weight_decay),
            augment: config.augment.clone(),
            threshold: config.stages.threshold,
        }
    }

    pub fn with_max_epochs(mut self, epochs: usize) -> Self {
        self.max_epochs = epochs;
        self
    }

    fn optimizer(&self) -> Adam {
        let (lr, b1, b2, wd) = self.adam;
        let mut adam = Adam::new(lr as f32);
        adam.beta1 = b1 as f32;
        adam.beta2 = b2 as f32;
        adam.weight_decay = wd as f32;
        adam
    }

    fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut keyed_rng(self.seed, &["shuffle".into(), self.name.as_str().into(), epoch.into()]));
        order
    }

    fn diverged(&self, epoch: usize, what: &str) -> Error {
        Error::Training {
            stage: self.name.clone(),
            epoch,
            message: format!("{what} became non-finite"),
        }
    }
}

/// Tracks the best validation epoch and decides when to stop.
struct EarlyStop {
    best: Option<Checkpoint>,
    best_metric: f64,
    stale: usize,
    patience: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        Self {
            best: None,
            best_metric: f64::NEG_INFINITY,
            stale: 0,
            patience,
        }
    }

    /// Records an epoch; returns true when training should stop.
    fn record(&mut self, metric: f64, snapshot: impl FnOnce() -> Checkpoint) -> bool {
        if metric > self.best_metric || self.best.is_none() {
            self.best_metric = metric;
            self.best = Some(snapshot());
            self.stale = 0;
            false
        } else {
            self.stale += 1;
            self.stale >= self.patience
        }
    }
}

fn stamp(mut meta: CheckpointMeta, epoch: usize, metric_name: &str, metric: f64) -> CheckpointMeta {
    meta.epoch = epoch;
    meta.metric_name = metric_name.to_string();
    meta.metric = metric;
    meta
}

fn require_nonempty(what: &str, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::contract(format!("{what} set is empty")));
    }
    Ok(())
}

fn grid_tensor(grids: &[&Grid<f32>]) -> Result<Tensor> {
    let (h, w) = (grids[0].height(), grids[0].width());
    let mut data = Vec::with_capacity(grids.len() * h * w);
    for g in grids {
        data.extend_from_slice(g.values());
    }
    Tensor::from_vec([1, grids.len(), h, w], data)
}

/// Segmenters share one loop; the enhanced one also consumes maps.
trait Segmenter: Module {
    fn seg_forward(&mut self, x: &Tensor, maps: Option<&Tensor>, train: bool) -> Result<Tensor>;
    fn seg_backward(&mut self, grad: &Tensor, through_encoder: bool);
}

impl Segmenter for SegmentationNet {
    fn seg_forward(&mut self, x: &Tensor, _maps: Option<&Tensor>, train: bool) -> Result<Tensor> {
        self.forward(x, train)
    }

    fn seg_backward(&mut self, grad: &Tensor, _through_encoder: bool) {
        self.backward(grad)
    }
}

impl Segmenter for EnhancedNet {
    fn seg_forward(&mut self, x: &Tensor, maps: Option<&Tensor>, train: bool) -> Result<Tensor> {
        let maps = maps.ok_or_else(|| Error::contract("enhanced segmenter needs localization maps"))?;
        self.forward(x, maps, train)
    }

    fn seg_backward(&mut self, grad: &Tensor, through_encoder: bool) {
        self.backward(grad, through_encoder)
    }
}

fn probs_to_masks(probs: &Tensor) -> Vec<Grid<f32>> {
    (0..probs.batch())
        .map(|n| Grid::new(probs.height(), probs.width(), probs.plane(n, 0).to_vec()).expect("positive size"))
        .collect()
}

fn predict_with<N: Segmenter>(
    net: &mut N,
    images: &[&Image],
    maps: Option<&[&MapEntry]>,
    augment: &AugmentationConfig,
) -> Result<Vec<Grid<f32>>> {
    let mut out = Vec::with_capacity(images.len());
    for (c, chunk) in images.chunks(EVAL_CHUNK).enumerate() {
        let xs = chunk
            .iter()
            .map(|im| preprocess(im, augment).to_tensor())
            .collect::<Vec<_>>();
        let x = Tensor::stack(&xs)?;
        let m = match maps {
            Some(all) => {
                let entries = &all[c * EVAL_CHUNK..c * EVAL_CHUNK + chunk.len()];
                let ts = entries
                    .iter()
                    .map(|e| grid_tensor(&e.channels.iter().collect::<Vec<_>>()))
                    .collect::<Result<Vec<_>>>()?;
                Some(Tensor::stack(&ts)?)
            }
            None => None,
        };
        let probs = net.seg_forward(&x, m.as_ref(), false)?;
        out.extend(probs_to_masks(&probs));
    }
    Ok(out)
}

/// Resizes a probability map to the ground-truth grid and wraps it.
pub fn prob_mask_at(pred: &Grid<f32>, height: usize, width: usize) -> Result<ProbMask> {
    let g = if pred.height() == height && pred.width() == width {
        pred.clone()
    } else {
        resize_grid(pred, height, width)
    };
    let values: Vec<f32> = g.values().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    ProbMask::from_f32(height, width, &values)
}

/// Scores probability maps against the samples' masks.
pub fn score_segmentation(preds: &[Grid<f32>], samples: &[SegSample], threshold: f64) -> Result<SegReport> {
    if preds.len() != samples.len() {
        return Err(Error::contract("one prediction per sample is required"));
    }
    let items = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| Ok((s.id.clone(), prob_mask_at(p, s.mask.height(), s.mask.width())?, s.mask.clone())))
        .collect::<Result<Vec<_>>>()?;
    segmentation_report(&items, threshold)
}

fn map_entries<'a>(maps: Option<&'a MapSet>, samples: &[SegSample]) -> Result<Option<Vec<&'a MapEntry>>> {
    maps.map(|m| samples.iter().map(|s| m.get(&s.id)).collect::<Result<Vec<_>>>())
        .transpose()
}

#[allow(clippy::too_many_arguments)]
fn fit_segmenter<N: Segmenter>(
    net: &mut N,
    meta: CheckpointMeta,
    train: &[SegSample],
    val: &[SegSample],
    maps: Option<&MapSet>,
    loss: &SegLoss,
    settings: &StageSettings,
    freeze_encoder: bool,
) -> Result<TrainOutcome> {
    require_nonempty("training", train.len())?;
    require_nonempty("validation", val.len())?;
    let train_maps = map_entries(maps, train)?;
    let val_maps = map_entries(maps, val)?;
    let val_images: Vec<&Image> = val.iter().map(|s| &s.image).collect();
    let filter = move |path: &str| !(freeze_encoder && path.starts_with("encoder."));
    let mut adam = settings.optimizer();
    let mut stop = EarlyStop::new(settings.patience);
    let mut curve = Vec::new();
    for epoch in 1..=settings.max_epochs {
        let order = settings.epoch_order(train.len(), epoch);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(settings.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len());
            let mut ms = Vec::with_capacity(chunk.len());
            let mut gts: Vec<GroundTruthMask> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &train[i];
                let aux: &[Grid<f32>] = match &train_maps {
                    Some(e) => &e[i].channels,
                    None => &[],
                };
                let w = augment_seg(s, aux, &settings.augment, &mut augment_rng(settings.seed, &s.id, epoch));
                xs.push(w.image.to_tensor());
                if !w.aux.is_empty() {
                    ms.push(grid_tensor(&w.aux.iter().collect::<Vec<_>>())?);
                }
                gts.push(w.mask.expect("segmentation samples carry masks"));
            }
            let x = Tensor::stack(&xs)?;
            let m = if ms.is_empty() { None } else { Some(Tensor::stack(&ms)?) };
            let probs = net.seg_forward(&x, m.as_ref(), true)?;
            if probs.data().iter().any(|v| !v.is_finite()) {
                return Err(settings.diverged(epoch, "prediction"));
            }
            let preds = probs_to_masks(&probs)
                .iter()
                .map(|g| ProbMask::from_f32(g.height(), g.width(), g.values()))
                .collect::<Result<Vec<_>>>()?;
            let (value, grads) = batch_mean(loss, &preds, &gts)?;
            if !value.is_finite() {
                return Err(settings.diverged(epoch, "loss"));
            }
            let mut grad = Tensor::zeros(probs.shape());
            for (n, g) in grads.iter().enumerate() {
                for (d, v) in grad.plane_mut(n, 0).iter_mut().zip(g) {
                    *d = *v as f32;
                }
            }
            net.zero_grad();
            net.seg_backward(&grad, !freeze_encoder);
            adam.step(net, &filter);
            loss_sum += value;
            batches += 1;
        }
        let preds = predict_with(net, &val_images, val_maps.as_deref(), &settings.augment)?;
        let val_ja = score_segmentation(&preds, val, settings.threshold)?.mean.ja;
        let train_loss = loss_sum / batches as f64;
        log::debug!("{} epoch {epoch}: loss {train_loss:.5} val JA {val_ja:.4}", settings.name);
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_metric: val_ja,
        });
        let meta_now = stamp(meta.clone(), epoch, "val_ja", val_ja);
        if stop.record(val_ja, || Checkpoint::capture(net, meta_now)) {
            break;
        }
    }
    Ok(TrainOutcome {
        checkpoint: stop.best.expect("at least one epoch ran"),
        curve,
    })
}

fn class_input(image: &Image, mask: Option<&Grid<f32>>) -> Result<Tensor> {
    let t = image.to_tensor();
    match mask {
        Some(m) => image_with_mask(&t, m),
        None => image_with_mask(&t, &Grid::filled(image.height(), image.width(), 0.0)),
    }
}

/// Class probabilities; `masks` of `None` feeds a zero fourth channel.
pub fn predict_classifier(
    net: &mut ClassifierNet,
    images: &[&Image],
    masks: Option<&[&Grid<f32>]>,
    augment: &AugmentationConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for (c, chunk) in images.chunks(EVAL_CHUNK).enumerate() {
        let xs = chunk
            .iter()
            .enumerate()
            .map(|(j, im)| {
                let pre = preprocess(im, augment);
                let mask = masks.map(|m| m[c * EVAL_CHUNK + j]);
                class_input(&pre, mask)
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(net.forward(&Tensor::stack(&xs)?, false)?.probs);
    }
    Ok(out)
}

fn cls_masks<'a>(masks: Option<&'a MapSet>, samples: &[ClsSample]) -> Result<Option<Vec<&'a Grid<f32>>>> {
    masks
        .map(|m| samples.iter().map(|s| m.get(&s.id).map(|e| &e.channels[0])).collect::<Result<Vec<_>>>())
        .transpose()
}

fn fit_classifier(
    net: &mut ClassifierNet,
    meta: CheckpointMeta,
    train: &[ClsSample],
    val: &[ClsSample],
    masks: Option<&MapSet>,
    settings: &StageSettings,
) -> Result<TrainOutcome> {
    require_nonempty("training", train.len())?;
    require_nonempty("validation", val.len())?;
    let classes = net.num_classes();
    if let Some(s) = train.iter().chain(val).find(|s| s.label >= classes) {
        return Err(Error::contract(format!("sample {} has label {} outside {classes} classes", s.id, s.label)));
    }
    let train_masks = cls_masks(masks, train)?;
    let val_masks = cls_masks(masks, val)?;
    let val_images: Vec<&Image> = val.iter().map(|s| &s.image).collect();
    let val_labels: Vec<usize> = val.iter().map(|s| s.label).collect();
    let mut adam = settings.optimizer();
    let mut stop = EarlyStop::new(settings.patience);
    let mut curve = Vec::new();
    for epoch in 1..=settings.max_epochs {
        let order = settings.epoch_order(train.len(), epoch);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(settings.batch_size) {
            let mut xs = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &train[i];
                let aux: Vec<Grid<f32>> = train_masks.as_ref().map(|m| vec![m[i].clone()]).unwrap_or_default();
                let w = augment_cls(s, &aux, &settings.augment, &mut augment_rng(settings.seed, &s.id, epoch));
                xs.push(class_input(&w.image, w.aux.first())?);
            }
            let out = net.forward(&Tensor::stack(&xs)?, true)?;
            let b = chunk.len() as f64;
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(chunk.len() * classes);
            for (p, &i) in out.probs.iter().zip(chunk) {
                let y = train[i].label;
                loss -= p[y].max(LOG_FLOOR).ln() / b;
                grad.extend(p.iter().enumerate().map(|(c, &pc)| ((pc - (c == y) as u8 as f64) / b) as f32));
            }
            if !loss.is_finite() {
                return Err(settings.diverged(epoch, "loss"));
            }
            net.zero_grad();
            net.backward(&grad);
            adam.step(net, &|_| true);
            loss_sum += loss;
            batches += 1;
        }
        let probs = predict_classifier(net, &val_images, val_masks.as_deref(), &settings.augment)?;
        let acc = multiclass_accuracy(&probs, &val_labels);
        let train_loss = loss_sum / batches as f64;
        log::debug!("{} epoch {epoch}: loss {train_loss:.5} val acc {acc:.4}", settings.name);
        curve.push(EpochRecord {
            epoch,
            train_loss,
            val_metric: acc,
        });
        let meta_now = stamp(meta.clone(), epoch, "val_accuracy", acc);
        if stop.record(acc, || Checkpoint::capture(net, meta_now)) {
            break;
        }
    }
    Ok(TrainOutcome {
        checkpoint: stop.best.expect("at least one epoch ran"),
        curve,
    })
}

/// Trains the coarse segmenter, from scratch or from `init`.
pub fn train_coarse(
    train: &[SegSample],
    val: &[SegSample],
    config: &PipelineConfig,
    init: Option<&Checkpoint>,
    settings: &StageSettings,
) -> Result<TrainOutcome> {
    let mut net = match init {
        Some(ckpt) => SegmentationNet::from_checkpoint(ckpt)?,
        None => build_coarse_sn(&config.backbone, config.seed)?,
    };
    let meta = CheckpointMeta::new(NetKind::Coarse, net.spec().clone(), config.seed);
    fit_segmenter(&mut net, meta, train, val, None, &config.loss.seg_loss(), settings, false)
}

/// Eval-mode coarse masks for `images`, keyed by id and stored at the
/// preprocessing resolution; binarized when the configuration asks for it.
pub fn generate_masks<'a>(
    coarse: &Checkpoint,
    images: impl IntoIterator<Item = (&'a str, &'a Image)>,
    config: &PipelineConfig,
) -> Result<MapSet> {
    let mut net = SegmentationNet::from_checkpoint(coarse)?;
    let (ids, imgs): (Vec<&str>, Vec<&Image>) = images.into_iter().unzip();
    let preds = predict_with(&mut net, &imgs, None, &config.augment)?;
    let mut set = MapSet::new(MapKind::CoarseMask);
    let t = config.stages.threshold as f32;
    for (id, mut p) in ids.into_iter().zip(preds) {
        if config.stages.binarize_masks {
            p.values_mut().iter_mut().for_each(|v| *v = if *v >= t { 1.0 } else { 0.0 });
        }
        if set.entries.insert(id.to_string(), MapEntry::single(p)).is_some() {
            return Err(Error::contract(format!("duplicate sample id '{id}'")));
        }
    }
    Ok(set)
}

/// Trains the mask classifier. Masks are required unless the configuration
/// ablates the mask channel.
pub fn train_classifier(
    train: &[ClsSample],
    val: &[ClsSample],
    masks: Option<&MapSet>,
    config: &PipelineConfig,
    init: ClassifierInit<'_>,
    settings: &StageSettings,
) -> Result<TrainOutcome> {
    let masks = if config.stages.no_mask {
        None
    } else {
        let m = masks.ok_or_else(|| Error::StageOrder("classifier training needs coarse masks".into()))?;
        m.require(train.iter().chain(val).map(|s| s.id.as_str()))?;
        Some(m)
    };
    let classes = config.num_classes();
    let mut net = match init {
        ClassifierInit::Resume(ckpt) => ClassifierNet::from_checkpoint(ckpt)?,
        ClassifierInit::Fresh { coarse } => {
            let mut net = build_mask_cn(&config.classifier_spec(), classes, config.seed)?;
            match coarse {
                Some(ckpt) if config.stages.classifier_init_from_coarse => {
                    let mut source = SegmentationNet::from_checkpoint(ckpt)?;
                    net.transfer_encoder(&mut source.encoder)?;
                }
                _ => net.init_fourth_channel()?,
            }
            net
        }
    };
    let mut meta = CheckpointMeta::new(NetKind::Classifier, net.spec().clone(), config.seed);
    meta.num_classes = Some(net.num_classes());
    fit_classifier(&mut net, meta, train, val, masks, settings)
}

/// Starting point for classifier training.
#[derive(Debug, Clone, Copy)]
pub enum ClassifierInit<'a> {
    /// New network; the trunk is copied from the coarse segmenter when given
    /// and enabled.
    Fresh { coarse: Option<&'a Checkpoint> },
    /// Continue from earlier classifier weights.
    Resume(&'a Checkpoint),
}

/// Localization maps for segmentation images, at preprocessing resolution.
pub fn generate_cams(
    classifier: &Checkpoint,
    coarse: &Checkpoint,
    samples: &[SegSample],
    config: &PipelineConfig,
) -> Result<MapSet> {
    let mut cls = ClassifierNet::from_checkpoint(classifier)?;
    let masks = generate_masks(coarse, samples.iter().map(|s| (s.id.as_str(), &s.image)), config)?;
    let [th, tw] = config.augment.target_size;
    let mut set = MapSet::new(MapKind::Cam);
    for s in samples {
        let image = preprocess(&s.image, &config.augment).to_tensor();
        let mask = &masks.get(&s.id)?.channels[0];
        let maps = if config.cam.all_classes {
            cams_all_classes(&mut cls, &image, mask)?
        } else {
            let class = if config.cam.use_ground_truth_class { s.label } else { None };
            vec![cam_for_sample(&mut cls, &image, mask, class)?]
        };
        let mut entry = MapEntry {
            channels: Vec::with_capacity(maps.len()),
            source_classes: Vec::with_capacity(maps.len()),
        };
        for m in &maps {
            let r = resize_map(m, th, tw)?;
            entry.source_classes.push(r.source_class);
            entry.channels.push(r.values);
        }
        set.entries.insert(s.id.clone(), entry);
    }
    Ok(set)
}

/// Starting point for enhanced segmenter training.
#[derive(Debug, Clone, Copy)]
pub enum EnhancedInit<'a> {
    FromCoarse(&'a Checkpoint),
    Resume(&'a Checkpoint),
}

pub fn train_enhanced(
    train: &[SegSample],
    val: &[SegSample],
    cams: &MapSet,
    config: &PipelineConfig,
    init: EnhancedInit<'_>,
    settings: &StageSettings,
) -> Result<TrainOutcome> {
    cams.require(train.iter().chain(val).map(|s| s.id.as_str()))?;
    let mut net = match init {
        EnhancedInit::FromCoarse(coarse) => build_enhanced_sn(coarse, config.map_channels(), config.seed)?,
        EnhancedInit::Resume(ckpt) => EnhancedNet::from_checkpoint(ckpt)?,
    };
    if let Some((id, e)) = cams.entries.iter().find(|(_, e)| e.channels.len() != net.map_channels()) {
        return Err(Error::config(format!(
            "maps for '{id}' have {} channels but the network expects {}",
            e.channels.len(),
            net.map_channels()
        )));
    }
    let mut meta = CheckpointMeta::new(NetKind::Enhanced, net.spec().clone(), config.seed);
    meta.map_channels = Some(net.map_channels());
    fit_segmenter(
        &mut net,
        meta,
        train,
        val,
        Some(cams),
        &config.loss.seg_loss(),
        settings,
        config.stages.freeze_encoder,
    )
}

/// Probability maps of the coarse segmenter at preprocessing resolution.
pub fn predict_coarse(coarse: &Checkpoint, samples: &[SegSample], config: &PipelineConfig) -> Result<Vec<Grid<f32>>> {
    let mut net = SegmentationNet::from_checkpoint(coarse)?;
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    predict_with(&mut net, &images, None, &config.augment)
}

pub fn predict_enhanced(
    enhanced: &Checkpoint,
    samples: &[SegSample],
    cams: &MapSet,
    config: &PipelineConfig,
) -> Result<Vec<Grid<f32>>> {
    let mut net = EnhancedNet::from_checkpoint(enhanced)?;
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    let entries = map_entries(Some(cams), samples)?.expect("maps given");
    predict_with(&mut net, &images, Some(&entries), &config.augment)
}

pub fn evaluate_coarse(coarse: &Checkpoint, samples: &[SegSample], config: &PipelineConfig) -> Result<SegReport> {
    score_segmentation(&predict_coarse(coarse, samples, config)?, samples, config.stages.threshold)
}

pub fn evaluate_enhanced(
    enhanced: &Checkpoint,
    samples: &[SegSample],
    cams: &MapSet,
    config: &PipelineConfig,
) -> Result<SegReport> {
    score_segmentation(&predict_enhanced(enhanced, samples, cams, config)?, samples, config.stages.threshold)
}

/// Classifier probabilities, feeding masks unless the mask channel is ablated.
pub fn classifier_probs(
    classifier: &Checkpoint,
    samples: &[ClsSample],
    masks: Option<&MapSet>,
    config: &PipelineConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut net = ClassifierNet::from_checkpoint(classifier)?;
    let masks = if config.stages.no_mask { None } else { masks };
    let grids = cls_masks(masks, samples)?;
    let images: Vec<&Image> = samples.iter().map(|s| &s.image).collect();
    predict_classifier(&mut net, &images, grids.as_deref(), &config.augment)
}

pub fn evaluate_classifier(
    classifier: &Checkpoint,
    samples: &[ClsSample],
    masks: Option<&MapSet>,
    config: &PipelineConfig,
) -> Result<ClsReport> {
    let probs = classifier_probs(classifier, samples, masks, config)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    classification_summary(&probs, &labels, &config.eval.cls_tasks)
}
