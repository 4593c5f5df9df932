//! Synthetic dermoscopy-like images with exactly known lesion masks.
//!
//! Each image holds one elliptical lesion on a skin-toned background. The
//! lesion's look depends on its class (0: smooth dark disk, 1: dark centre
//! with a bright rim, 2: blotchy speckled texture). Curved dark strokes mimic
//! hairs and additive Gaussian noise is applied last. The stored mask is
//! point-in-ellipse membership of every pixel centre.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{ClsSample, Image, SegSample};
use crate::error::{Error, Result};
use crate::losses::GroundTruthMask;
use crate::rng::keyed_rng;

pub const CLASS_NAMES: [&str; 3] = ["dark_disk", "bright_ring", "speckled"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_seg: usize,
    pub num_cls: usize,
    pub image_size: usize,
    pub num_classes: usize,
    /// Semi-axis range as a fraction of the image side.
    pub lesion_axes_range: [f64; 2],
    /// Mean number of hair strokes per image.
    pub distractor_density: f64,
    /// Standard deviation of the additive noise.
    pub noise_level: f64,
    /// Added to the background tone; a nonzero value gives a shifted domain.
    pub background_shift: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_seg: 300,
            num_cls: 300,
            image_size: 64,
            num_classes: 3,
            lesion_axes_range: [0.12, 0.3],
            distractor_density: 2.0,
            noise_level: 0.04,
            background_shift: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn class_names(&self) -> Vec<String> {
        CLASS_NAMES[..self.num_classes]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=CLASS_NAMES.len()).contains(&self.num_classes) {
            return Err(Error::config(format!(
                "synthetic.num_classes must be 2 or 3, got {}",
                self.num_classes
            )));
        }
        if self.image_size < 8 {
            return Err(Error::config("synthetic.image_size must be at least 8"));
        }
        let [lo, hi] = self.lesion_axes_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::config("synthetic.lesion_axes_range must satisfy 0 < lo <= hi"));
        }
        if hi * self.image_size as f64 > self.image_size as f64 / 2.0 - 1.0 {
            return Err(Error::config(format!(
                "lesion semi-axis {hi} of the image side does not fit inside a {}px image",
                self.image_size
            )));
        }
        if self.distractor_density < 0.0 || self.noise_level < 0.0 {
            return Err(Error::config("synthetic densities and noise must be nonnegative"));
        }
        Ok(())
    }
}

/// Geometry of one generated lesion, in pixel units with pixel centres at
/// `i + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseLesion {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_axis_x: f64,
    pub semi_axis_y: f64,
    pub angle: f64,
    pub class: usize,
}

impl EllipseLesion {
    /// Squared normalized radius of a point; `<= 1` is inside.
    pub fn radius2(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.center_x, y - self.center_y);
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let u = (dx * c + dy * s) / self.semi_axis_x;
        let v = (-dx * s + dy * c) / self.semi_axis_y;
        u * u + v * v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub seg: Vec<SegSample>,
    pub cls: Vec<ClsSample>,
    pub seg_lesions: Vec<EllipseLesion>,
    pub cls_lesions: Vec<EllipseLesion>,
    pub class_names: Vec<String>,
}

impl SyntheticDataset {
    pub fn into_parts(self) -> (Vec<SegSample>, Vec<ClsSample>) {
        (self.seg, self.cls)
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Bilinearly interpolated lattice noise in `[-1, 1]` with the given cell size.
struct ValueNoise {
    cells: usize,
    values: Vec<f64>,
    cell: f64,
}

impl ValueNoise {
    fn new(size: usize, cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let cells = (size as f64 / cell).ceil() as usize + 2;
        let values = (0..cells * cells).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Self { cells, values, cell }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let g = |i: usize, j: usize| self.values[j.min(self.cells - 1) * self.cells + i.min(self.cells - 1)];
        let top = g(x0, y0) * (1.0 - fx) + g(x0 + 1, y0) * fx;
        let bottom = g(x0, y0 + 1) * (1.0 - fx) + g(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn render(config: &SyntheticConfig, class: usize, rng: &mut ChaCha8Rng) -> (Image, GroundTruthMask, EllipseLesion) {
    let size = config.image_size;
    let sf = size as f64;
    let [lo, hi] = config.lesion_axes_range;
    let a = rng.gen_range(lo..=hi) * sf;
    let b = rng.gen_range(lo..=hi) * sf;
    let reach = a.max(b) + 1.0;
    let lesion = EllipseLesion {
        center_x: rng.gen_range(reach..=sf - reach),
        center_y: rng.gen_range(reach..=sf - reach),
        semi_axis_x: a,
        semi_axis_y: b,
        angle: rng.gen_range(0.0..std::f64::consts::PI),
        class,
    };

    let tone = rng.gen_range(0.72..0.92) + config.background_shift;
    let skin = [tone, tone * rng.gen_range(0.72..0.82), tone * rng.gen_range(0.58..0.7)];
    let shade_dir = rng.gen_range(0.0..std::f64::consts::TAU);
    let dark = rng.gen_range(0.75..1.0);
    let core = [0.42 * dark, 0.26 * dark, 0.17 * dark];
    let rim = [0.93, 0.78, 0.66];
    let speckle = ValueNoise::new(size, 3.0, rng);

    let mut planes = vec![vec![0.0f64; size * size]; 3];
    let mut mask = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let i = y * size + x;
            let r2 = lesion.radius2(px, py);
            mask[i] = (r2 <= 1.0) as u8;
            let shade = 0.04 * ((px - sf / 2.0) * shade_dir.cos() + (py - sf / 2.0) * shade_dir.sin()) / sf;
            let mut color = skin.map(|c| c + shade);
            let r = r2.sqrt();
            // Soft boundary centred on the true ellipse.
            let alpha = 1.0 - smoothstep(0.93, 1.07, r);
            if alpha > 0.0 {
                let inside = match class {
                    0 => core.map(|c| c * (0.85 + 0.15 * r)),
                    1 => {
                        let t = smoothstep(0.55, 0.85, r);
                        [0, 1, 2].map(|c| core[c] * (1.0 - t) + rim[c] * t)
                    }
                    _ => {
                        let n = speckle.at(px, py);
                        core.map(|c| (c * (1.0 + 0.9 * n)).max(0.0))
                    }
                };
                for c in 0..3 {
                    color[c] = color[c] * (1.0 - alpha) + inside[c] * alpha;
                }
            }
            for c in 0..3 {
                planes[c][i] = color[c];
            }
        }
    }

    let hairs = if config.distractor_density > 0.0 {
        Poisson::new(config.distractor_density).map(|d| d.sample(rng) as usize).unwrap_or(0)
    } else {
        0
    };
    for _ in 0..hairs {
        let pts: Vec<(f64, f64)> = (0..3).map(|_| (rng.gen_range(0.0..sf), rng.gen_range(0.0..sf))).collect();
        let width = rng.gen_range(0.5..1.0);
        let hair = [0.12, 0.09, 0.07];
        let steps = (4.0 * sf) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let u = 1.0 - t;
            let hx = u * u * pts[0].0 + 2.0 * u * t * pts[1].0 + t * t * pts[2].0;
            let hy = u * u * pts[0].1 + 2.0 * u * t * pts[1].1 + t * t * pts[2].1;
            let (x0, x1) = ((hx - 2.0).floor().max(0.0) as usize, ((hx + 2.0).ceil() as usize).min(size));
            let (y0, y1) = ((hy - 2.0).floor().max(0.0) as usize, ((hy + 2.0).ceil() as usize).min(size));
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = ((x as f64 + 0.5 - hx).powi(2) + (y as f64 + 0.5 - hy).powi(2)).sqrt();
                    let cover = (1.0 - (d - width).max(0.0) / 0.8).clamp(0.0, 1.0) * 0.85;
                    let i = y * size + x;
                    for c in 0..3 {
                        let blended = planes[c][i] * (1.0 - cover) + hair[c] * cover;
                        planes[c][i] = planes[c][i].min(blended);
                    }
                }
            }
        }
    }

    let noise = Normal::new(0.0, config.noise_level.max(0.0)).expect("finite noise level");
    let mut data = Vec::with_capacity(3 * size * size);
    for plane in &planes {
        for &v in plane {
            let n = if config.noise_level > 0.0 { noise.sample(rng) } else { 0.0 };
            data.push((v + n).clamp(0.0, 1.0) as f32);
        }
    }
    let image = Image::new(size, size, 3, data).expect("positive image size");
    let mask = GroundTruthMask::new(size, size, mask).expect("binary mask");
    (image, mask, lesion)
}

/// Generates the segmentation and classification sets. Class of sample `i`
/// is `i mod num_classes`; everything else is drawn from a stream keyed by
/// the seed, the set name and the index.
pub fn generate_synthetic_dataset(config: &SyntheticConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut out = SyntheticDataset {
        seg: Vec::with_capacity(config.num_seg),
        cls: Vec::with_capacity(config.num_cls),
        seg_lesions: Vec::with_capacity(config.num_seg),
        cls_lesions: Vec::with_capacity(config.num_cls),
        class_names: config.class_names(),
    };
    for i in 0..config.num_seg {
        let class = i % config.num_classes;
        let mut rng = keyed_rng(config.seed, &["synthetic".into(), "seg".into(), i.into()]);
        let (image, mask, lesion) = render(config, class, &mut rng);
        out.seg.push(SegSample::new(format!("seg_{i:05}"), image, mask, Some(class))?);
        out.seg_lesions.push(lesion);
    }
    for i in 0..config.num_cls {
        let class = i % config.num_classes;
        let mut rng = keyed_rng(config.seed, &["synthetic".into(), "cls".into(), i.into()]);
        let (image, _, lesion) = render(config, class, &mut rng);
        out.cls.push(ClsSample {
            id: format!("cls_{i:05}"),
            image,
            label: class,
        });
        out.cls_lesions.push(lesion);
    }
    Ok(out)
}
