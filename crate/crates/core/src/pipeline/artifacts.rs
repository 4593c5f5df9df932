//! Per-sample soft maps handed between stages: coarse masks for the
//! classifier and localization maps for the enhanced segmenter.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_f32_file, read_json, write_f32_file, write_json, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::tensor::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    CoarseMask,
    Cam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapEntry {
    /// One grid per channel, all the same shape.
    pub channels: Vec<Grid<f32>>,
    /// Class behind each localization-map channel; empty for masks.
    pub source_classes: Vec<usize>,
}

impl MapEntry {
    pub fn single(grid: Grid<f32>) -> Self {
        Self {
            channels: vec![grid],
            source_classes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapSet {
    pub kind: MapKind,
    pub entries: BTreeMap<String, MapEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EntryRecord {
    id: String,
    file: String,
    channels: usize,
    height: usize,
    width: usize,
    source_classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MapManifest {
    kind: MapKind,
    entries: Vec<EntryRecord>,
}

impl MapSet {
    pub fn new(kind: MapKind) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Result<&MapEntry> {
        self.entries
            .get(id)
            .ok_or_else(|| Error::StageOrder(format!("no {:?} map recorded for sample '{id}'", self.kind)))
    }

    /// Fails unless every id has an entry.
    pub fn require<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for id in ids {
            self.get(id)?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut records = Vec::with_capacity(self.entries.len());
        for (index, (id, entry)) in self.entries.iter().enumerate() {
            let first = entry
                .channels
                .first()
                .ok_or_else(|| Error::contract(format!("map for '{id}' has no channels")))?;
            let mut values = Vec::with_capacity(first.len() * entry.channels.len());
            for g in &entry.channels {
                if !g.same_shape(first) {
                    return Err(Error::contract(format!("map channels for '{id}' differ in shape")));
                }
                values.extend_from_slice(g.values());
            }
            // Ids may contain characters that are awkward in file names.
            let file = format!("{index:06}.bin");
            write_f32_file(&dir.join(&file), &values)?;
            records.push(EntryRecord {
                id: id.clone(),
                file,
                channels: entry.channels.len(),
                height: first.height(),
                width: first.width(),
                source_classes: entry.source_classes.clone(),
            });
        }
        write_json(
            &dir.join(MANIFEST_FILE),
            &MapManifest {
                kind: self.kind,
                entries: records,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: MapManifest = read_json(&dir.join(MANIFEST_FILE))?;
        let mut entries = BTreeMap::new();
        for r in manifest.entries {
            let values = read_f32_file(&dir.join(&r.file))?;
            let plane = r.height * r.width;
            if values.len() != plane * r.channels || plane == 0 {
                return Err(Error::format(
                    "map file",
                    format!("{} holds {} values, manifest implies {}", r.file, values.len(), plane * r.channels),
                ));
            }
            let channels = values
                .chunks(plane)
                .map(|c| Grid::new(r.height, r.width, c.to_vec()))
                .collect::<Result<Vec<_>>>()?;
            if entries
                .insert(
                    r.id.clone(),
                    MapEntry {
                        channels,
                        source_classes: r.source_classes,
                    },
                )
                .is_some()
            {
                return Err(Error::format("map manifest", format!("duplicate id '{}'", r.id)));
            }
        }
        Ok(Self {
            kind: manifest.kind,
            entries,
        })
    }
}
