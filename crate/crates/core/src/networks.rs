//! The three network roles over a shared plain encoder–decoder backbone.
//!
//! * [`SegmentationNet`]: strided-conv encoder, skip-free bilinear decoder,
//!   1-channel sigmoid head.
//! * [`ClassifierNet`]: the same encoder taking image + mask (4 channels),
//!   followed by a stride-1 dilated stage in place of a further
//!   down-sampling, global average pooling and a fully connected softmax head.
//! * [`EnhancedNet`]: the segmenter's encoder and decoder with a fusion block
//!   in between that mixes encoder features with localization maps.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta, NetKind};
use crate::error::{Error, Result};
use crate::nn::{join, BilinearPlan, Conv2d, ConvBnRelu, ConvGeometry, Linear, Module, Slot};
use crate::rng::keyed_rng;
use crate::tensor::{Grid, Tensor};

pub const BACKBONE_PLAIN: &str = "plain";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSpec {
    pub name: String,
    pub input_channels: usize,
    pub base_width: usize,
    /// Number of stride-2 stages.
    pub depth: usize,
    /// Dilation of the classifier's final stage.
    pub dilation_last_stage: usize,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            name: BACKBONE_PLAIN.to_string(),
            input_channels: 3,
            base_width: 16,
            depth: 4,
            dilation_last_stage: 2,
        }
    }
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name != BACKBONE_PLAIN {
            return Err(Error::config(format!(
                "unsupported backbone '{}' (available: {BACKBONE_PLAIN})",
                self.name
            )));
        }
        if self.input_channels == 0 || self.base_width == 0 || self.dilation_last_stage == 0 {
            return Err(Error::config("backbone widths, channels and dilation must be positive"));
        }
        if !(1..=6).contains(&self.depth) {
            return Err(Error::config(format!("backbone depth must be in 1..=6, got {}", self.depth)));
        }
        Ok(())
    }

    pub fn with_input_channels(&self, input_channels: usize) -> Self {
        Self {
            input_channels,
            ..self.clone()
        }
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Channel count of the encoder output.
    pub fn feature_channels(&self) -> usize {
        self.stage_width(self.depth - 1)
    }

    /// Total down-sampling factor of the encoder.
    pub fn stride(&self) -> usize {
        1 << self.depth
    }
}

fn conv(cin: usize, cout: usize, kernel: usize, stride: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Conv2d {
    Conv2d::new(
        ConvGeometry {
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding: dilation * (kernel / 2),
            dilation,
        },
        rng,
    )
}

/// Stack of stride-2 stages, each two 3×3 conv-BN-ReLU units.
#[derive(Debug, Clone)]
pub struct Encoder {
    stages: Vec<Vec<ConvBnRelu>>,
    input_sizes: Vec<(usize, usize)>,
}

impl Encoder {
    fn new(spec: &BackboneSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::with_capacity(spec.depth);
        let mut cin = spec.input_channels;
        for s in 0..spec.depth {
            let w = spec.stage_width(s);
            stages.push(vec![
                ConvBnRelu::new(conv(cin, w, 3, 2, 1, rng)),
                ConvBnRelu::new(conv(w, w, 3, 1, 1, rng)),
            ]);
            cin = w;
        }
        Self {
            stages,
            input_sizes: Vec::new(),
        }
    }

    /// The first convolution, which sees the raw input channels.
    pub fn stem(&mut self) -> &mut Conv2d {
        &mut self.stages[0][0].conv
    }

    /// Spatial size of each stage input from the last forward pass.
    pub fn input_sizes(&self) -> &[(usize, usize)] {
        &self.input_sizes
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        self.input_sizes.clear();
        let mut h = x.clone();
        for stage in &mut self.stages {
            self.input_sizes.push((h.height(), h.width()));
            for unit in stage.iter_mut() {
                h = unit.forward(&h, train);
            }
        }
        h
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        let mut g = grad;
        for stage in self.stages.iter_mut().rev() {
            for unit in stage.iter_mut().rev() {
                g = unit.backward(g);
            }
        }
        g
    }
}

impl Module for Encoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (u, unit) in stage.iter_mut().enumerate() {
                unit.visit(&join(prefix, &format!("stage{s}.unit{u}")), f);
            }
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    unit: ConvBnRelu,
    plan: Option<BilinearPlan>,
}

/// Bilinear up-sampling stages back to input resolution, then a 1×1
/// convolution to one channel and a sigmoid.
#[derive(Debug, Clone)]
pub struct Decoder {
    stages: Vec<DecoderStage>,
    head: Conv2d,
    output: Option<Tensor>,
}

impl Decoder {
    fn new(spec: &BackboneSpec, rng: &mut ChaCha8Rng) -> Self {
        let mut stages = Vec::with_capacity(spec.depth);
        let mut cin = spec.feature_channels();
        for i in 0..spec.depth {
            let cout = spec.stage_width(spec.depth.saturating_sub(2 + i));
            stages.push(DecoderStage {
                unit: ConvBnRelu::new(conv(cin, cout, 3, 1, 1, rng)),
                plan: None,
            });
            cin = cout;
        }
        let head = conv(cin, 1, 1, 1, 1, rng);
        Self {
            stages,
            head,
            output: None,
        }
    }

    /// `sizes` are the encoder stage input sizes, shallowest first.
    pub fn forward(&mut self, features: &Tensor, sizes: &[(usize, usize)], train: bool) -> Tensor {
        let mut h = features.clone();
        for (stage, &(th, tw)) in self.stages.iter_mut().zip(sizes.iter().rev()) {
            let plan = match &stage.plan {
                Some(p) if p.src() == (h.height(), h.width()) && p.dst() == (th, tw) => p.clone(),
                _ => BilinearPlan::new(h.height(), h.width(), th, tw),
            };
            h = plan.resize_tensor(&h);
            stage.plan = Some(plan);
            h = stage.unit.forward(&h, train);
        }
        let mut logits = self.head.forward(&h, train);
        for v in logits.data_mut() {
            *v = sigmoid(*v);
        }
        self.output = train.then(|| logits.clone());
        logits
    }

    /// Takes dLoss/dprobability, returns dLoss/dfeatures.
    pub fn backward(&mut self, grad_probs: &Tensor) -> Tensor {
        let probs = self
            .output
            .take()
            .expect("decoder backward called without a training forward pass");
        let mut g = grad_probs.clone();
        for (gv, &p) in g.data_mut().iter_mut().zip(probs.data()) {
            *gv *= p * (1.0 - p);
        }
        let mut g = self.head.backward(&g);
        for stage in self.stages.iter_mut().rev() {
            g = stage.unit.backward(g);
            let plan = stage.plan.as_ref().expect("plan recorded during forward");
            g = plan.adjoint_tensor(&g);
        }
        g
    }
}

impl Module for Decoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.unit.visit(&join(prefix, &format!("stage{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
}

pub(crate) fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_input(x: &Tensor, channels: usize, stride: usize) -> Result<()> {
    if x.channels() != channels {
        return Err(Error::contract(format!(
            "network expects {channels} input channels, got {}",
            x.channels()
        )));
    }
    if x.batch() == 0 || x.height() < stride || x.width() < stride {
        return Err(Error::contract(format!(
            "input {:?} is empty or smaller than the encoder stride {stride}",
            x.shape()
        )));
    }
    Ok(())
}

/// Coarse segmenter.
#[derive(Debug, Clone)]
pub struct SegmentationNet {
    spec: BackboneSpec,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

pub fn build_coarse_sn(spec: &BackboneSpec, seed: u64) -> Result<SegmentationNet> {
    spec.validate()?;
    if spec.input_channels != 3 {
        return Err(Error::config(format!(
            "segmentation backbones take 3 input channels, got {}",
            spec.input_channels
        )));
    }
    let mut rng = keyed_rng(seed, &["init".into(), "coarse".into()]);
    Ok(SegmentationNet {
        spec: spec.clone(),
        encoder: Encoder::new(spec, &mut rng),
        decoder: Decoder::new(spec, &mut rng),
    })
}

impl SegmentationNet {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    /// `[N, 3, H, W]` image batch to `[N, 1, H, W]` lesion probabilities.
    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<Tensor> {
        check_input(x, 3, self.spec.stride())?;
        let feats = self.encoder.forward(x, train);
        let sizes = self.encoder.input_sizes().to_vec();
        Ok(self.decoder.forward(&feats, &sizes, train))
    }

    pub fn backward(&mut self, grad_probs: &Tensor) {
        let g = self.decoder.backward(grad_probs);
        self.encoder.backward(g);
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(NetKind::Coarse)?;
        let mut net = build_coarse_sn(&ckpt.meta.spec, ckpt.meta.seed)?;
        ckpt.restore(&mut net, "")?;
        Ok(net)
    }

    pub fn checkpoint(&mut self, meta: CheckpointMeta) -> Checkpoint {
        Checkpoint::capture(self, meta)
    }
}

impl Module for SegmentationNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
}

/// Mask-guided classifier.
#[derive(Debug, Clone)]
pub struct ClassifierNet {
    spec: BackboneSpec,
    num_classes: usize,
    pub encoder: Encoder,
    pub dilated: Vec<ConvBnRelu>,
    pub fc: Linear,
    features: Option<Tensor>,
}

/// Class probabilities together with the last convolutional feature grid.
#[derive(Debug, Clone)]
pub struct ClassifierOutput {
    /// `[N][C]` softmax probabilities.
    pub probs: Vec<Vec<f64>>,
    /// `[N, K, h, w]` input to global average pooling.
    pub features: Tensor,
}

pub fn build_mask_cn(spec: &BackboneSpec, num_classes: usize, seed: u64) -> Result<ClassifierNet> {
    spec.validate()?;
    if spec.input_channels != 4 {
        return Err(Error::config(format!(
            "the mask-guided classifier takes 4 input channels, got {}",
            spec.input_channels
        )));
    }
    if num_classes < 2 {
        return Err(Error::config(format!("need at least 2 classes, got {num_classes}")));
    }
    let mut rng = keyed_rng(seed, &["init".into(), "classifier".into()]);
    let encoder = Encoder::new(spec, &mut rng);
    let k = spec.feature_channels();
    let d = spec.dilation_last_stage;
    let dilated = vec![
        ConvBnRelu::new(conv(k, k, 3, 1, d, &mut rng)),
        ConvBnRelu::new(conv(k, k, 3, 1, d, &mut rng)),
    ];
    let fc = Linear::new(k, num_classes, &mut rng);
    Ok(ClassifierNet {
        spec: spec.clone(),
        num_classes,
        encoder,
        dilated,
        fc,
        features: None,
    })
}

/// Sets input channel 3 of a `[out, 4, k, k]` stem to the mean of channels
/// 0..3 at every tap; channels 0..3 are returned unchanged.
pub fn init_fourth_channel(weights: &[f32], shape: [usize; 4]) -> Result<Vec<f32>> {
    let [out, cin, kh, kw] = shape;
    if cin != 4 {
        return Err(Error::contract(format!("stem must have 4 input channels, got {cin}")));
    }
    if weights.len() != out * cin * kh * kw {
        return Err(Error::contract(format!(
            "stem of shape {shape:?} needs {} weights, got {}",
            out * cin * kh * kw,
            weights.len()
        )));
    }
    let taps = kh * kw;
    let mut result = weights.to_vec();
    for filter in result.chunks_mut(cin * taps) {
        for t in 0..taps {
            filter[3 * taps + t] = (filter[t] + filter[taps + t] + filter[2 * taps + t]) / 3.0;
        }
    }
    Ok(result)
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl ClassifierNet {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_channels(&self) -> usize {
        self.fc.in_features
    }

    /// Rewrites the mask-channel stem weights from the RGB ones.
    pub fn init_fourth_channel(&mut self) -> Result<()> {
        let stem = self.encoder.stem();
        let shape = [
            stem.weight.shape[0],
            stem.weight.shape[1],
            stem.weight.shape[2],
            stem.weight.shape[3],
        ];
        stem.weight.value = init_fourth_channel(&stem.weight.value, shape)?;
        Ok(())
    }

    /// Copies RGB stem and trunk weights from a segmenter encoder of the same
    /// architecture; the mask channel is then filled by
    /// [`init_fourth_channel`].
    pub fn transfer_encoder(&mut self, source: &mut Encoder) -> Result<()> {
        let mut tensors = std::collections::BTreeMap::new();
        source.visit("", &mut |path, slot| {
            tensors.insert(path.to_string(), (slot.shape().to_vec(), slot.values().to_vec()));
        });
        let mut mismatch = None;
        self.encoder.visit("", &mut |path, mut slot| {
            let Some((shape, values)) = tensors.get(path) else {
                mismatch = Some(format!("source encoder has no tensor '{path}'"));
                return;
            };
            if path == "stage0.unit0.conv.weight" {
                // [out, 3, k, k] into the first three input channels of [out, 4, k, k]
                let [out, _, kh, kw] = [shape[0], shape[1], shape[2], shape[3]];
                let dst = slot.values_mut();
                if dst.len() != out * 4 * kh * kw || shape[1] != 3 {
                    mismatch = Some(format!("stem shapes differ at '{path}'"));
                    return;
                }
                for o in 0..out {
                    let src = &values[o * 3 * kh * kw..(o + 1) * 3 * kh * kw];
                    dst[o * 4 * kh * kw..o * 4 * kh * kw + 3 * kh * kw].copy_from_slice(src);
                }
            } else if slot.shape() == shape.as_slice() {
                slot.values_mut().copy_from_slice(values);
            } else {
                mismatch = Some(format!("shape mismatch at '{path}'"));
            }
        });
        match mismatch {
            Some(m) => Err(Error::config(m)),
            None => self.init_fourth_channel(),
        }
    }

    /// FC weights as a `(feature_channels, num_classes)` grid.
    pub fn fc_weight_matrix(&self) -> Grid<f32> {
        let k = self.fc.in_features;
        let c = self.fc.out_features;
        let mut values = vec![0.0; k * c];
        for class in 0..c {
            for ch in 0..k {
                values[ch * c + class] = self.fc.weight.value[class * k + ch];
            }
        }
        Grid::new(k, c, values).expect("fc dimensions are positive")
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Result<ClassifierOutput> {
        check_input(x, 4, self.spec.stride())?;
        let mut h = self.encoder.forward(x, train);
        for unit in &mut self.dilated {
            h = unit.forward(&h, train);
        }
        let [n, k, _, _] = h.shape();
        let area = h.plane_len() as f32;
        let mut pooled = Vec::with_capacity(n * k);
        for i in 0..n {
            for ch in 0..k {
                pooled.push(h.plane(i, ch).iter().sum::<f32>() / area);
            }
        }
        let logits = self.fc.forward(&pooled, n, train);
        let probs = logits.chunks(self.num_classes).map(softmax).collect();
        if train {
            self.features = Some(h.clone());
        }
        Ok(ClassifierOutput { probs, features: h })
    }

    /// Takes dLoss/dlogits (`[N * C]`).
    pub fn backward(&mut self, grad_logits: &[f32]) {
        let feats = self
            .features
            .take()
            .expect("classifier backward called without a training forward pass");
        let dpooled = self.fc.backward(grad_logits);
        let [n, k, h, w] = feats.shape();
        let area = (h * w) as f32;
        let mut g = Tensor::zeros([n, k, h, w]);
        for i in 0..n {
            for ch in 0..k {
                let v = dpooled[i * k + ch] / area;
                g.plane_mut(i, ch).iter_mut().for_each(|x| *x = v);
            }
        }
        for unit in self.dilated.iter_mut().rev() {
            g = unit.backward(g);
        }
        self.encoder.backward(g);
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(NetKind::Classifier)?;
        let classes = ckpt
            .meta
            .num_classes
            .ok_or_else(|| Error::config("classifier checkpoint lacks num_classes"))?;
        let mut net = build_mask_cn(&ckpt.meta.spec, classes, ckpt.meta.seed)?;
        ckpt.restore(&mut net, "")?;
        Ok(net)
    }
}

impl Module for ClassifierNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        for (i, unit) in self.dilated.iter_mut().enumerate() {
            unit.visit(&join(prefix, &format!("dilated.unit{i}")), f);
        }
        self.fc.visit(&join(prefix, "fc"), f);
    }
}

/// Enhanced segmenter.
#[derive(Debug, Clone)]
pub struct EnhancedNet {
    spec: BackboneSpec,
    map_channels: usize,
    pub encoder: Encoder,
    /// concat → 1×1 conv → BN → ReLU
    pub e_layer: ConvBnRelu,
    pub decoder: Decoder,
}

/// Builds an enhanced segmenter whose encoder and decoder start from a
/// coarse-segmenter checkpoint; the fusion block is freshly initialized.
pub fn build_enhanced_sn(coarse: &Checkpoint, map_channels: usize, seed: u64) -> Result<EnhancedNet> {
    coarse.expect_kind(NetKind::Coarse)?;
    if map_channels == 0 {
        return Err(Error::config("map_channels must be at least 1"));
    }
    let spec = coarse.meta.spec.clone();
    let mut base = build_coarse_sn(&spec, seed)?;
    coarse.restore(&mut base, "")?;
    let mut rng = keyed_rng(seed, &["init".into(), "e_layer".into()]);
    let k = spec.feature_channels();
    let e_layer = ConvBnRelu::new(conv(k + map_channels, k, 1, 1, 1, &mut rng));
    Ok(EnhancedNet {
        spec,
        map_channels,
        encoder: base.encoder,
        e_layer,
        decoder: base.decoder,
    })
}

impl EnhancedNet {
    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn map_channels(&self) -> usize {
        self.map_channels
    }

    /// `maps` is `[N, map_channels, h, w]` at any resolution; it is resized to
    /// the encoder grid before fusion.
    pub fn forward(&mut self, x: &Tensor, maps: &Tensor, train: bool) -> Result<Tensor> {
        check_input(x, 3, self.spec.stride())?;
        if maps.channels() != self.map_channels || maps.batch() != x.batch() {
            return Err(Error::contract(format!(
                "expected {} localization map channels for a batch of {}, got {:?}",
                self.map_channels,
                x.batch(),
                maps.shape()
            )));
        }
        let feats = self.encoder.forward(x, train);
        let sizes = self.encoder.input_sizes().to_vec();
        let plan = BilinearPlan::new(maps.height(), maps.width(), feats.height(), feats.width());
        let mut resized = plan.resize_tensor(maps);
        resized.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        let fused = self.e_layer.forward(&Tensor::concat_channels(&feats, &resized)?, train);
        Ok(self.decoder.forward(&fused, &sizes, train))
    }

    /// Backpropagates; the encoder is skipped when `through_encoder` is false.
    pub fn backward(&mut self, grad_probs: &Tensor, through_encoder: bool) {
        let g = self.decoder.backward(grad_probs);
        let g = self.e_layer.backward(g);
        if through_encoder {
            let k = self.spec.feature_channels();
            self.encoder.backward(g.take_channels(k));
        }
    }

    /// Sets the fusion block to pass encoder features through untouched:
    /// identity on encoder channels, zero on map channels, and an eval-mode
    /// batch norm with unit scale and no shift.
    pub fn neutralize_e_layer(&mut self) {
        let k = self.spec.feature_channels();
        let cin = k + self.map_channels;
        let conv = &mut self.e_layer.conv;
        conv.weight.value.iter_mut().for_each(|w| *w = 0.0);
        for o in 0..k {
            conv.weight.value[o * cin + o] = 1.0;
        }
        conv.bias.value.iter_mut().for_each(|b| *b = 0.0);
        let bn = &mut self.e_layer.norm;
        bn.gamma.value.iter_mut().for_each(|v| *v = 1.0);
        bn.beta.value.iter_mut().for_each(|v| *v = 0.0);
        bn.running_mean.value.iter_mut().for_each(|v| *v = 0.0);
        bn.running_var
            .value
            .iter_mut()
            .for_each(|v| *v = 1.0 - crate::nn::BN_EPS);
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(NetKind::Enhanced)?;
        let maps = ckpt
            .meta
            .map_channels
            .ok_or_else(|| Error::config("enhanced checkpoint lacks map_channels"))?;
        let spec = ckpt.meta.spec.clone();
        let mut rng = keyed_rng(ckpt.meta.seed, &["init".into(), "coarse".into()]);
        let k = spec.feature_channels();
        let mut net = EnhancedNet {
            encoder: Encoder::new(&spec, &mut rng),
            decoder: Decoder::new(&spec, &mut rng),
            e_layer: ConvBnRelu::new(conv(k + maps, k, 1, 1, 1, &mut rng)),
            spec,
            map_channels: maps,
        };
        ckpt.restore(&mut net, "")?;
        Ok(net)
    }
}

impl Module for EnhancedNet {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.e_layer.visit(&join(prefix, "e_layer"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
}

/// Random weights in `[-scale, scale]` for every parameter, for tests that
/// need a network far from its initialization.
pub fn perturb(module: &mut dyn Module, rng: &mut impl Rng, scale: f32) {
    module.visit("", &mut |_, slot| {
        if let Slot::Param(p) = slot {
            for v in &mut p.value {
                *v += rng.gen_range(-scale..=scale);
            }
        }
    });
}
