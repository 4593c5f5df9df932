//! ISIC-style directory layout:
//!
//! ```text
//! <root>/images/<id>.<ext>
//! <root>/masks/<id>_segmentation.<ext>
//! <root>/labels.csv            header `id,label`, label = class name
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};

use super::{ClsSample, Image, SegSample};
use crate::error::{Error, Result};
use crate::losses::GroundTruthMask;

pub const LABELS_FILE: &str = "labels.csv";
const EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "PNG"];

fn find_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))
}

fn read_rgb(path: &Path) -> Result<Image> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (x, y, px) in rgb.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * w * h + i] = px[c] as f32 / 255.0;
        }
    }
    Image::new(h, w, 3, data)
}

/// Grayscale masks are binarized at half intensity.
fn read_mask(path: &Path) -> Result<GroundTruthMask> {
    let gray = open(path)?.to_luma8();
    let values = gray.pixels().map(|p| (p[0] as f32 / 255.0 >= 0.5) as u8).collect();
    GroundTruthMask::new(gray.height() as usize, gray.width() as usize, values)
}

/// Sorted file stems under `<root>/images`.
pub fn list_image_ids(root: &Path) -> Result<Vec<String>> {
    let dir = root.join("images");
    let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e));
        if known {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    ids.dedup();
    Ok(ids)
}

/// Loads the samples named in `manifest`, in manifest order.
pub fn load_seg_dataset(root: &Path, manifest: &[String]) -> Result<Vec<SegSample>> {
    let images = root.join("images");
    let masks = root.join("masks");
    manifest
        .iter()
        .map(|id| {
            let image_path = find_file(&images, id)
                .ok_or_else(|| Error::Ingestion(format!("no image for sample '{id}'")))?;
            let mask_path = find_file(&masks, &format!("{id}_segmentation"))
                .ok_or_else(|| Error::Ingestion(format!("no mask for sample '{id}'")))?;
            let image = read_rgb(&image_path)?;
            let mask = read_mask(&mask_path)?;
            SegSample::new(id.clone(), image, mask, None)
                .map_err(|e| Error::Ingestion(format!("sample '{id}': {e}")))
        })
        .collect()
}

/// `(id, class name)` rows of a labels file, in file order.
pub fn read_class_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .clone();
    if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(Error::Ingestion(format!(
            "{}: expected header 'id,label'",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Ingestion(format!("{} row {}: {e}", path.display(), line + 1)))?;
        rows.push((record[0].trim().to_string(), record[1].trim().to_string()));
    }
    Ok(rows)
}

/// Loads every row of `labels_file`; class names index into `class_names`.
pub fn load_cls_dataset(root: &Path, labels_file: &Path, class_names: &[String]) -> Result<Vec<ClsSample>> {
    let index: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let images = root.join("images");
    read_class_labels(labels_file)?
        .into_iter()
        .enumerate()
        .map(|(row, (id, name))| {
            let label = *index.get(name.as_str()).ok_or_else(|| {
                Error::Ingestion(format!("row {} ('{id}'): unknown class '{name}'", row + 1))
            })?;
            let path = find_file(&images, &id)
                .ok_or_else(|| Error::Ingestion(format!("row {} ('{id}'): no image", row + 1)))?;
            Ok(ClsSample {
                id,
                image: read_rgb(&path)?,
                label,
            })
        })
        .collect()
}

fn to_rgb8(image: &Image) -> RgbImage {
    let (h, w) = (image.height(), image.width());
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |c: usize| (image.plane(c.min(image.channels() - 1))[i].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

fn save_png(img: impl Into<image::DynamicImage>, path: &Path) -> Result<()> {
    img.into().save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn write_labels(root: &Path, rows: &[(String, String)]) -> Result<()> {
    let path = root.join(LABELS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(path.display().to_string(), e))?;
    w.write_record(["id", "label"]).map_err(|e| Error::format(path.display().to_string(), e))?;
    for (id, label) in rows {
        w.write_record([id, label]).map_err(|e| Error::format(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes images, masks (0/255 PNG) and, when every sample has a label, a
/// labels file.
pub fn export_seg_dataset(root: &Path, samples: &[SegSample], class_names: &[String]) -> Result<()> {
    ensure_dir(&root.join("images"))?;
    ensure_dir(&root.join("masks"))?;
    for s in samples {
        save_png(to_rgb8(&s.image), &root.join("images").join(format!("{}.png", s.id)))?;
        let mask = GrayImage::from_fn(s.mask.width() as u32, s.mask.height() as u32, |x, y| {
            image::Luma([s.mask.grid().get(y as usize, x as usize) * 255])
        });
        save_png(mask, &root.join("masks").join(format!("{}_segmentation.png", s.id)))?;
    }
    let labels: Option<Vec<(String, String)>> = samples
        .iter()
        .map(|s| s.label.and_then(|l| class_names.get(l)).map(|n| (s.id.clone(), n.clone())))
        .collect();
    if let Some(rows) = labels {
        write_labels(root, &rows)?;
    }
    Ok(())
}

pub fn export_cls_dataset(root: &Path, samples: &[ClsSample], class_names: &[String]) -> Result<()> {
    ensure_dir(&root.join("images"))?;
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        save_png(to_rgb8(&s.image), &root.join("images").join(format!("{}.png", s.id)))?;
        let name = class_names
            .get(s.label)
            .ok_or_else(|| Error::contract(format!("sample {} has label {} without a class name", s.id, s.label)))?;
        rows.push((s.id.clone(), name.clone()));
    }
    write_labels(root, &rows)
}

