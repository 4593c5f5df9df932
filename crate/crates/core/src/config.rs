//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by `section.key=value` pairs. Unknown keys and type mismatches are
//! rejected with the offending key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentationConfig, SyntheticConfig};
use crate::error::{Error, Result};
use crate::losses::{ClassWeights, HybridLossParams, SegLoss};
use crate::networks::BackboneSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// ISIC-layout directory with pixel-labelled images.
    pub seg_root: PathBuf,
    /// Directory with image-level labelled images and a labels file.
    pub cls_root: PathBuf,
    pub class_names: Vec<String>,
    /// Train / validation / test counts, taken in dataset order.
    pub seg_split: [usize; 3],
    pub cls_split: [usize; 3],
    /// Fraction of the training split actually used.
    pub train_fraction_seg: f64,
    pub train_fraction_cls: f64,
    /// Generator settings; sample counts follow the splits.
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            seg_root: PathBuf::new(),
            cls_root: PathBuf::new(),
            class_names: vec!["melanoma".into(), "seborrheic_keratosis".into(), "nevus".into()],
            seg_split: [200, 50, 50],
            cls_split: [200, 50, 50],
            train_fraction_seg: 1.0,
            train_fraction_cls: 1.0,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn num_classes(&self) -> usize {
        match self.source {
            DataSource::Synthetic => self.synthetic.num_classes,
            DataSource::Disk => self.class_names.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Hybrid,
    Dice,
    Wce,
    Focal,
}

impl LossKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "hybrid" => Ok(LossKind::Hybrid),
            "dice" => Ok(LossKind::Dice),
            "wce" => Ok(LossKind::Wce),
            "focal" => Ok(LossKind::Focal),
            other => Err(Error::Usage(format!(
                "unknown loss '{other}' (expected hybrid, dice, wce or focal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    pub lambda_weight: f64,
    pub k_hard: usize,
    pub margin: f64,
    pub epsilon: f64,
    pub wce_lesion_weight: f64,
    pub wce_background_weight: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        let h = HybridLossParams::default();
        Self {
            kind: LossKind::Hybrid,
            lambda_weight: h.lambda_weight,
            k_hard: h.k_hard,
            margin: h.margin,
            epsilon: h.epsilon,
            wce_lesion_weight: 1.0,
            wce_background_weight: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 1.0,
        }
    }
}

impl LossConfig {
    pub fn hybrid_params(&self) -> HybridLossParams {
        HybridLossParams {
            lambda_weight: self.lambda_weight,
            k_hard: self.k_hard,
            margin: self.margin,
            epsilon: self.epsilon,
        }
    }

    pub fn seg_loss(&self) -> SegLoss {
        match self.kind {
            LossKind::Hybrid => SegLoss::Hybrid(self.hybrid_params()),
            LossKind::Dice => SegLoss::Dice {
                epsilon: self.epsilon,
            },
            LossKind::Wce => SegLoss::Wce(ClassWeights {
                lesion: self.wce_lesion_weight,
                background: self.wce_background_weight,
            }),
            LossKind::Focal => SegLoss::Focal {
                gamma: self.focal_gamma,
                alpha: self.focal_alpha,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub batch_size_seg: usize,
    pub batch_size_cls: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub early_stop_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size_seg: 16,
            batch_size_cls: 32,
            max_epochs: 500,
            early_stop_patience: 30,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CamConfig {
    /// Stack the maps of every class instead of the predicted class only.
    pub all_classes: bool,
    /// Use the known image label instead of the predicted class.
    pub use_ground_truth_class: bool,
}

impl Default for CamConfig {
    fn default() -> Self {
        Self {
            all_classes: false,
            use_ground_truth_class: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    /// Hand binarized coarse masks to the classifier instead of soft ones.
    pub binarize_masks: bool,
    /// Replace the mask channel with zeros (ablation).
    pub no_mask: bool,
    /// Keep the enhanced segmenter's encoder at the coarse weights.
    pub freeze_encoder: bool,
    /// Start the classifier trunk from the coarse segmenter's encoder
    /// instead of a seeded random one.
    pub classifier_init_from_coarse: bool,
    /// Probability threshold for segmentation metrics.
    pub threshold: f64,
    /// Epoch budget when fine-tuning pretrained networks.
    pub fine_tune_epochs: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            binarize_masks: false,
            no_mask: false,
            freeze_encoder: false,
            classifier_init_from_coarse: false,
            threshold: 0.5,
            fine_tune_epochs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Positive class of each one-vs-rest classification task.
    pub cls_tasks: Vec<usize>,
    /// Number of qualitative overlay panels to render.
    pub overlay_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cls_tasks: vec![0, 1],
            overlay_samples: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Empty means "choose from the environment or command".
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub backbone: BackboneSpec,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub augment: AugmentationConfig,
    pub cam: CamConfig,
    pub stages: StageConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::new(),
            data: DataConfig::default(),
            backbone: BackboneSpec::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            augment: AugmentationConfig::default(),
            cam: CamConfig::default(),
            stages: StageConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Desk-scale settings for the synthetic generator: 64×64 images, a
    /// depth-3 backbone and a short epoch budget.
    pub fn synthetic_desk() -> Self {
        let mut c = Self::default();
        c.backbone.depth = 3;
        c.backbone.base_width = 8;
        c.augment.target_size = [64, 64];
        c.augment.shift_pixels = 4.0;
        c.augment.crop_scale_range = [0.8, 1.0];
        c.optim.learning_rate = 3e-3;
        c.optim.max_epochs = 40;
        c.optim.early_stop_patience = 10;
        c.stages.fine_tune_epochs = 15;
        c
    }

    pub fn num_classes(&self) -> usize {
        self.data.num_classes()
    }

    pub fn map_channels(&self) -> usize {
        if self.cam.all_classes {
            self.num_classes()
        } else {
            1
        }
    }

    pub fn classifier_spec(&self) -> BackboneSpec {
        self.backbone.with_input_channels(4)
    }

    /// Synthetic generator settings with counts taken from the splits.
    pub fn synthetic_config(&self) -> SyntheticConfig {
        let mut s = self.data.synthetic.clone();
        s.num_seg = self.data.seg_split.iter().sum();
        s.num_cls = self.data.cls_split.iter().sum();
        s.seed = self.seed;
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.backbone.input_channels != 3 {
            return Err(Error::config(
                "backbone.input_channels must be 3 (the classifier adds the mask channel itself)",
            ));
        }
        self.loss.hybrid_params().validate()?;
        if self.loss.wce_lesion_weight <= 0.0 || self.loss.wce_background_weight <= 0.0 {
            return Err(Error::config("loss.wce_*_weight must be positive"));
        }
        if self.loss.focal_gamma < 0.0 {
            return Err(Error::config("loss.focal_gamma must be nonnegative"));
        }
        let o = &self.optim;
        if !(o.learning_rate > 0.0) || o.batch_size_seg == 0 || o.batch_size_cls == 0 || o.max_epochs == 0 {
            return Err(Error::config("optim learning rate, batch sizes and max_epochs must be positive"));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.weight_decay < 0.0 {
            return Err(Error::config("optim betas must lie in [0, 1) and weight_decay be nonnegative"));
        }
        self.augment.validate()?;
        let stride = self.backbone.stride();
        if self.augment.target_size.iter().any(|&s| s < stride) {
            return Err(Error::config(format!(
                "augment.target_size {:?} is smaller than the backbone stride {stride}",
                self.augment.target_size
            )));
        }
        let d = &self.data;
        for (name, f) in [("train_fraction_seg", d.train_fraction_seg), ("train_fraction_cls", d.train_fraction_cls)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::config(format!("data.{name} must lie in (0, 1], got {f}")));
            }
        }
        for (name, split) in [("seg_split", d.seg_split), ("cls_split", d.cls_split)] {
            if split[0] == 0 || split[1] == 0 {
                return Err(Error::config(format!("data.{name} needs nonempty train and validation parts")));
            }
        }
        match d.source {
            DataSource::Synthetic => self.synthetic_config().validate()?,
            DataSource::Disk => {
                if d.seg_root.as_os_str().is_empty() || d.cls_root.as_os_str().is_empty() {
                    return Err(Error::config("data.seg_root and data.cls_root are required for disk data"));
                }
            }
        }
        let classes = self.num_classes();
        if classes < 2 {
            return Err(Error::config("at least two classes are required"));
        }
        if let Some(t) = self.eval.cls_tasks.iter().find(|&&t| t >= classes) {
            return Err(Error::config(format!(
                "eval.cls_tasks entry {t} is out of range for {classes} classes"
            )));
        }
        if !(0.0..=1.0).contains(&self.stages.threshold) {
            return Err(Error::config("stages.threshold must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("configuration", e))
    }

    /// Defaults, then `file` (if any), then overrides; validated.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        Self::resolve_from(Self::default(), file, overrides)
    }

    pub fn resolve_from(base: Self, file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = toml::Value::try_from(&base).map_err(|e| Error::format("configuration", e))?;
        let schema = toml::Value::try_from(Self::default()).map_err(|e| Error::format("configuration", e))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Usage(format!("cannot read config file {}: {e}", path.display())))?;
            let parsed: toml::Value = toml::from_str(&text)
                .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
            merge(&mut value, &schema, parsed, "")?;
        }
        for (key, raw) in overrides {
            apply_override(&mut value, &schema, key, raw)?;
        }
        let config: Self = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Usage(format!("invalid configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }
}

fn kind(v: &toml::Value) -> &'static str {
    match v {
        toml::Value::String(_) => "string",
        toml::Value::Integer(_) => "integer",
        toml::Value::Float(_) => "float",
        toml::Value::Boolean(_) => "boolean",
        toml::Value::Datetime(_) => "datetime",
        toml::Value::Array(_) => "array",
        toml::Value::Table(_) => "table",
    }
}

/// Checks `incoming` against the type of `schema`, coercing integers where
/// floats are expected.
fn typed(schema: &toml::Value, incoming: toml::Value, path: &str) -> Result<toml::Value> {
    match (schema, incoming) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => Ok(toml::Value::Float(i as f64)),
        (toml::Value::Array(s), toml::Value::Array(items)) => {
            let Some(proto) = s.first() else {
                return Ok(toml::Value::Array(items));
            };
            items
                .into_iter()
                .map(|v| typed(proto, v, path))
                .collect::<Result<Vec<_>>>()
                .map(toml::Value::Array)
        }
        (s, v) if kind(s) == kind(&v) => Ok(v),
        (s, v) => Err(Error::Usage(format!(
            "key '{path}' expects {}, got {}",
            kind(s),
            kind(&v)
        ))),
    }
}

fn merge(target: &mut toml::Value, schema: &toml::Value, incoming: toml::Value, prefix: &str) -> Result<()> {
    let (toml::Value::Table(dst), toml::Value::Table(src)) = (target, incoming) else {
        return Err(Error::Usage(format!("'{prefix}' must be a table")));
    };
    let schema = schema.as_table().expect("schema mirrors target");
    for (key, value) in src {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        let Some(slot_schema) = schema.get(&key) else {
            return Err(Error::Usage(format!("unknown configuration key '{path}'")));
        };
        if slot_schema.is_table() {
            let slot = dst.get_mut(&key).expect("schema mirrors target");
            merge(slot, slot_schema, value, &path)?;
        } else {
            dst.insert(key, typed(slot_schema, value, &path)?);
        }
    }
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(target: &mut toml::Value, schema: &toml::Value, key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = target;
    let mut schema_node = schema;
    for (i, part) in parts.iter().enumerate() {
        let Some(next_schema) = schema_node.get(*part) else {
            return Err(Error::Usage(format!("unknown configuration key '{key}'")));
        };
        let last = i + 1 == parts.len();
        if last {
            if next_schema.is_table() {
                return Err(Error::Usage(format!("'{key}' is a section, not a value")));
            }
            let value = match (next_schema, parse_literal(raw)) {
                // Bare words are strings even when they look like something else.
                (toml::Value::String(_), v) if !v.is_str() => toml::Value::String(raw.to_string()),
                (_, v) => v,
            };
            let value = typed(next_schema, value, key)?;
            node.as_table_mut()
                .expect("schema mirrors target")
                .insert(part.to_string(), value);
            return Ok(());
        }
        if !next_schema.is_table() {
            return Err(Error::Usage(format!("unknown configuration key '{key}'")));
        }
        schema_node = next_schema;
        node = node
            .as_table_mut()
            .and_then(|t| t.get_mut(*part))
            .expect("schema mirrors target");
    }
    Ok(())
}

/// Splits `key=value`.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override '{text}' is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ov(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let text = c.to_toml().unwrap();
        let back: PipelineConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        PipelineConfig::synthetic_desk().validate().unwrap();
    }

    #[test]
    fn override_sets_nested_value() {
        let c = PipelineConfig::resolve(None, &[ov("loss.k_hard", "50"), ov("loss.margin", "0")]).unwrap();
        assert_eq!(c.loss.k_hard, 50);
        assert_eq!(c.loss.margin, 0.0);
        let c = PipelineConfig::resolve(None, &[ov("loss.kind", "dice"), ov("backbone.name", "plain")]).unwrap();
        assert_eq!(c.loss.kind, LossKind::Dice);
    }

    #[test]
    fn unknown_key_names_the_path() {
        let err = PipelineConfig::resolve(None, &[ov("loss.k_hardd", "3")]).unwrap_err();
        assert!(err.to_string().contains("loss.k_hardd"), "{err}");
        let err = PipelineConfig::resolve(None, &[ov("loss", "3")]).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn type_mismatch_names_the_path() {
        let err = PipelineConfig::resolve(None, &[ov("optim.max_epochs", "lots")]).unwrap_err();
        assert!(err.to_string().contains("optim.max_epochs"), "{err}");
    }

    #[test]
    fn range_violation_is_reported() {
        let err = PipelineConfig::resolve(None, &[ov("loss.margin", "1.5")]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let err = PipelineConfig::resolve(None, &[ov("eval.cls_tasks", "[0, 7]")]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 9\n[loss]\nk_hard = 10\nlambda_weight = 0\n").unwrap();
        let c = PipelineConfig::resolve(Some(&path), &[ov("loss.k_hard", "50")]).unwrap();
        assert_eq!((c.seed, c.loss.k_hard, c.loss.lambda_weight), (9, 50, 0.0));
        std::fs::write(&path, "[loss]\nbogus = 1\n").unwrap();
        let err = PipelineConfig::resolve(Some(&path), &[]).unwrap_err();
        assert!(err.to_string().contains("loss.bogus"), "{err}");
        let missing = PipelineConfig::resolve(Some(&dir.path().join("nope.toml")), &[]).unwrap_err();
        assert!(matches!(missing, Error::Usage(_)));
    }
}
