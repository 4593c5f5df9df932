//! Weight snapshots and their on-disk form: one little-endian `f32` file per
//! tensor plus a JSON manifest holding shapes and metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::BackboneSpec;
use crate::nn::Module;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DTYPE_F32_LE: &str = "f32le";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Coarse,
    Classifier,
    Enhanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: NetKind,
    pub spec: BackboneSpec,
    pub num_classes: Option<usize>,
    pub map_channels: Option<usize>,
    pub epoch: usize,
    pub metric_name: String,
    pub metric: f64,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn new(kind: NetKind, spec: BackboneSpec, seed: u64) -> Self {
        Self {
            kind,
            spec,
            num_classes: None,
            map_channels: None,
            epoch: 0,
            metric_name: String::new(),
            metric: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    /// Keyed by layer path, e.g. `encoder.stage0.unit0.conv.weight`.
    pub tensors: BTreeMap<String, TensorRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    path: String,
    shape: Vec<usize>,
    dtype: String,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    meta: CheckpointMeta,
    tensors: Vec<ManifestEntry>,
}

impl Checkpoint {
    pub fn capture(module: &mut dyn Module, meta: CheckpointMeta) -> Self {
        let mut tensors = BTreeMap::new();
        module.visit("", &mut |path, slot| {
            tensors.insert(
                path.to_string(),
                TensorRecord {
                    shape: slot.shape().to_vec(),
                    values: slot.values().to_vec(),
                },
            );
        });
        Self { meta, tensors }
    }

    pub fn expect_kind(&self, kind: NetKind) -> Result<()> {
        if self.meta.kind == kind {
            Ok(())
        } else {
            Err(Error::config(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.meta.kind
            )))
        }
    }

    /// Copies every tensor under `prefix` into the module. Tensors the module
    /// has but the checkpoint lacks are left alone only if `prefix` filters
    /// them out; otherwise a missing or mis-shaped tensor is an error.
    pub fn restore(&self, module: &mut dyn Module, prefix: &str) -> Result<()> {
        let mut problem = None;
        module.visit("", &mut |path, mut slot| {
            if problem.is_some() || !path.starts_with(prefix) {
                return;
            }
            match self.tensors.get(path) {
                None => problem = Some(format!("checkpoint has no tensor '{path}'")),
                Some(rec) if rec.shape != slot.shape() => {
                    problem = Some(format!(
                        "tensor '{path}' has shape {:?} in the checkpoint but {:?} in the network",
                        rec.shape,
                        slot.shape()
                    ))
                }
                Some(rec) => slot.values_mut().copy_from_slice(&rec.values),
            }
        });
        match problem {
            Some(p) => Err(Error::config(p)),
            None => Ok(()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let tensor_dir = dir.join("tensors");
        fs::create_dir_all(&tensor_dir).map_err(|e| Error::io(&tensor_dir, e))?;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (path, rec) in &self.tensors {
            let file = format!("tensors/{path}.bin");
            write_f32_file(&dir.join(&file), &rec.values)?;
            entries.push(ManifestEntry {
                path: path.clone(),
                shape: rec.shape.clone(),
                dtype: DTYPE_F32_LE.to_string(),
                file,
            });
        }
        let manifest = Manifest {
            meta: self.meta.clone(),
            tensors: entries,
        };
        write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
        let mut tensors = BTreeMap::new();
        for entry in manifest.tensors {
            if entry.dtype != DTYPE_F32_LE {
                return Err(Error::format("checkpoint", format!("unsupported dtype '{}'", entry.dtype)));
            }
            let values = read_f32_file(&dir.join(&entry.file))?;
            if values.len() != entry.shape.iter().product::<usize>() {
                return Err(Error::format(
                    "checkpoint",
                    format!("tensor '{}' length does not match shape {:?}", entry.path, entry.shape),
                ));
            }
            tensors.insert(
                entry.path,
                TensorRecord {
                    shape: entry.shape,
                    values,
                },
            );
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }
}

pub fn write_f32_file(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path.display().to_string(),
            "length is not a multiple of 4 bytes",
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path.display().to_string(), e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e))
}
