//! Random geometric and photometric augmentation.
//!
//! One draw produces a single affine map from output pixels to source pixels
//! (centre crop, flips, rotation, shear, zoom and shift folded together). The
//! image is resampled bilinearly; masks go through the same map with
//! nearest-neighbour sampling so they stay binary.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClsSample, Image, SegSample};
use crate::losses::GroundTruthMask;
use crate::rng::keyed_rng;
use crate::tensor::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// Side of the centre crop as a fraction of the image side.
    pub crop_scale_range: [f64; 2],
    /// Maximum absolute rotation.
    pub rotation_degrees: f64,
    pub shear_radians: f64,
    /// Maximum absolute shift in output pixels.
    pub shift_pixels: f64,
    pub zoom_factor: f64,
    /// Chance that the zoom is applied to a draw.
    pub zoom_probability: f64,
    pub whitening: bool,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub target_size: [usize; 2],
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_scale_range: [0.5, 1.0],
            rotation_degrees: 10.0,
            shear_radians: 0.1,
            shift_pixels: 20.0,
            zoom_factor: 1.1,
            zoom_probability: 0.5,
            whitening: true,
            horizontal_flip: true,
            vertical_flip: true,
            target_size: [224, 224],
        }
    }
}

impl AugmentationConfig {
    /// Every transform disabled: augmentation reduces to a resize.
    pub fn identity(target_size: [usize; 2]) -> Self {
        Self {
            crop_scale_range: [1.0, 1.0],
            rotation_degrees: 0.0,
            shear_radians: 0.0,
            shift_pixels: 0.0,
            zoom_factor: 1.0,
            zoom_probability: 0.0,
            whitening: false,
            horizontal_flip: false,
            vertical_flip: false,
            target_size,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let [lo, hi] = self.crop_scale_range;
        let bad = |msg: &str| Err(crate::Error::config(format!("augment.{msg}")));
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return bad("crop_scale_range must satisfy 0 < lo <= hi <= 1");
        }
        if self.rotation_degrees < 0.0 || self.shear_radians < 0.0 || self.shift_pixels < 0.0 {
            return bad("rotation, shear and shift ranges must be nonnegative");
        }
        if !(self.zoom_factor > 0.0) || !(0.0..=1.0).contains(&self.zoom_probability) {
            return bad("zoom_factor must be positive and zoom_probability in [0, 1]");
        }
        if self.target_size[0] == 0 || self.target_size[1] == 0 {
            return bad("target_size must be positive");
        }
        Ok(())
    }
}

/// One concrete draw of the random transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub crop_scale: f64,
    pub rotation_radians: f64,
    pub shear_radians: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub zoom: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub whitening: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            crop_scale: 1.0,
            rotation_radians: 0.0,
            shear_radians: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            zoom: 1.0,
            horizontal_flip: false,
            vertical_flip: false,
            whitening: false,
        }
    }
}

fn symmetric(rng: &mut ChaCha8Rng, limit: f64) -> f64 {
    if limit > 0.0 {
        rng.gen_range(-limit..=limit)
    } else {
        0.0
    }
}

pub fn draw_params(config: &AugmentationConfig, rng: &mut ChaCha8Rng) -> AugmentParams {
    let [lo, hi] = config.crop_scale_range;
    let crop_scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let rotation_radians = symmetric(rng, config.rotation_degrees).to_radians();
    let shear_radians = symmetric(rng, config.shear_radians);
    let shift_x = symmetric(rng, config.shift_pixels);
    let shift_y = symmetric(rng, config.shift_pixels);
    let zoom = if rng.gen_bool(config.zoom_probability) {
        config.zoom_factor
    } else {
        1.0
    };
    let horizontal_flip = config.horizontal_flip && rng.gen_bool(0.5);
    let vertical_flip = config.vertical_flip && rng.gen_bool(0.5);
    AugmentParams {
        crop_scale,
        rotation_radians,
        shear_radians,
        shift_x,
        shift_y,
        zoom,
        horizontal_flip,
        vertical_flip,
        whitening: config.whitening,
    }
}

/// Stream for augmenting sample `id` in `epoch`.
pub fn augment_rng(seed: u64, id: &str, epoch: usize) -> ChaCha8Rng {
    keyed_rng(seed, &["augment".into(), id.into(), epoch.into()])
}

/// Maps output pixel indices to source pixel indices:
/// `src = m · (u, v) + t` with `(u, v)` = (column, row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub m: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine {
    pub fn build(params: &AugmentParams, src: (usize, usize), dst: (usize, usize)) -> Self {
        let (sh, sw) = (src.0 as f64, src.1 as f64);
        let (dh, dw) = (dst.0 as f64, dst.1 as f64);
        // Output pixels to centred crop coordinates (source pixel units).
        let sx = params.crop_scale * sw / dw;
        let sy = params.crop_scale * sh / dh;
        let fx = if params.horizontal_flip { -1.0 } else { 1.0 };
        let fy = if params.vertical_flip { -1.0 } else { 1.0 };
        let base = [[fx * sx, 0.0], [0.0, fy * sy]];
        // Crop frame to source frame: rotation · shear · (1 / zoom).
        let (c, s) = (params.rotation_radians.cos(), params.rotation_radians.sin());
        let rot = [[c, -s], [s, c]];
        let shear = [[1.0, -params.shear_radians.sin()], [0.0, params.shear_radians.cos()]];
        let z = 1.0 / params.zoom;
        let geo = mul(&mul(&rot, &shear), &[[z, 0.0], [0.0, z]]);
        let m = mul(&geo, &base);
        // Centred output coordinate of pixel u is (u + 0.5 - dw/2).
        let off = [0.5 - dw / 2.0, 0.5 - dh / 2.0];
        let t = [
            m[0][0] * off[0] + m[0][1] * off[1] + params.shift_x * sw / dw + sw / 2.0 - 0.5,
            m[1][0] * off[0] + m[1][1] * off[1] + params.shift_y * sh / dh + sh / 2.0 - 0.5,
        ];
        Self { m, t }
    }

    pub fn apply(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.m[0][0] * u + self.m[0][1] * v + self.t[0],
            self.m[1][0] * u + self.m[1][1] * v + self.t[1],
        )
    }
}

fn mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

/// Value used where the map leaves the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fill {
    /// Replicate the nearest border pixel.
    Edge,
    Zero,
}

/// Resamples one plane through `affine` into a `dst_h × dst_w` plane.
pub fn warp_plane(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    affine: &Affine,
    dst_h: usize,
    dst_w: usize,
    interp: Interp,
    fill: Fill,
) -> Vec<f32> {
    let fetch = |x: isize, y: isize| -> f32 {
        if x >= 0 && y >= 0 && (x as usize) < src_w && (y as usize) < src_h {
            src[y as usize * src_w + x as usize]
        } else {
            match fill {
                Fill::Zero => 0.0,
                Fill::Edge => {
                    let cx = x.clamp(0, src_w as isize - 1) as usize;
                    let cy = y.clamp(0, src_h as isize - 1) as usize;
                    src[cy * src_w + cx]
                }
            }
        }
    };
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for v in 0..dst_h {
        for u in 0..dst_w {
            let (x, y) = affine.apply(u as f64, v as f64);
            let value = match interp {
                Interp::Nearest => fetch((x + 0.5).floor() as isize, (y + 0.5).floor() as isize),
                Interp::Bilinear => {
                    let (x0, y0) = (x.floor(), y.floor());
                    let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
                    let (x0, y0) = (x0 as isize, y0 as isize);
                    let top = fetch(x0, y0) * (1.0 - fx) + fetch(x0 + 1, y0) * fx;
                    let bottom = fetch(x0, y0 + 1) * (1.0 - fx) + fetch(x0 + 1, y0 + 1) * fx;
                    top * (1.0 - fy) + bottom * fy
                }
            };
            out.push(value);
        }
    }
    out
}

/// Per-image standardization followed by a min-max stretch to `[0, 1]`.
fn whiten(image: &mut Image) {
    let n = image.data.len() as f64;
    let mean = image.data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = image.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1.0 / n.sqrt());
    let z: Vec<f64> = image.data.iter().map(|&v| (v as f64 - mean) / std).collect();
    let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    for (d, v) in image.data.iter_mut().zip(z) {
        *d = if range > 0.0 { ((v - lo) / range) as f32 } else { 0.0 };
    }
}

/// Result of warping an image and its companions through one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: Image,
    /// Auxiliary soft maps (coarse masks, localization maps), bilinear.
    pub aux: Vec<Grid<f32>>,
    pub mask: Option<GroundTruthMask>,
}

/// Applies one drawn transform to an image, any auxiliary maps, and an
/// optional mask. Auxiliary maps share the image geometry and are never
/// whitened.
pub fn apply_params(
    image: &Image,
    aux: &[Grid<f32>],
    mask: Option<&GroundTruthMask>,
    params: &AugmentParams,
    target: [usize; 2],
) -> Warped {
    let [th, tw] = target;
    let (h, w) = (image.height(), image.width());
    let affine = Affine::build(params, (h, w), (th, tw));
    let mut data = Vec::with_capacity(th * tw * image.channels());
    for c in 0..image.channels() {
        data.extend(warp_plane(image.plane(c), h, w, &affine, th, tw, Interp::Bilinear, Fill::Edge));
    }
    let mut out = Image::new(th, tw, image.channels(), data).expect("target size is positive");
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    if params.whitening {
        whiten(&mut out);
    }
    let aux = aux
        .iter()
        .map(|g| {
            let a = Affine::build(params, (g.height(), g.width()), (th, tw));
            let v = warp_plane(g.values(), g.height(), g.width(), &a, th, tw, Interp::Bilinear, Fill::Edge)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect();
            Grid::new(th, tw, v).expect("target size is positive")
        })
        .collect();
    let mask = mask.map(|m| {
        let a = Affine::build(params, (m.height(), m.width()), (th, tw));
        let plane: Vec<f32> = m.values().iter().map(|&v| v as f32).collect();
        let warped = warp_plane(&plane, m.height(), m.width(), &a, th, tw, Interp::Nearest, Fill::Zero);
        let labels = warped.into_iter().map(|v| (v >= 0.5) as u8).collect();
        GroundTruthMask::new(th, tw, labels).expect("nearest sampling keeps labels binary")
    });
    Warped { image: out, aux, mask }
}

/// Deterministic evaluation-time preprocessing: resize to the target size
/// and whiten when training does.
pub fn preprocess(image: &Image, config: &AugmentationConfig) -> Image {
    let [th, tw] = config.target_size;
    let mut out = image.resized(th, tw);
    if config.whitening {
        whiten(&mut out);
    }
    out
}

pub fn augment_seg(sample: &SegSample, aux: &[Grid<f32>], config: &AugmentationConfig, rng: &mut ChaCha8Rng) -> Warped {
    let params = draw_params(config, rng);
    apply_params(&sample.image, aux, Some(&sample.mask), &params, config.target_size)
}

pub fn augment_cls(sample: &ClsSample, aux: &[Grid<f32>], config: &AugmentationConfig, rng: &mut ChaCha8Rng) -> Warped {
    let params = draw_params(config, rng);
    apply_params(&sample.image, aux, None, &params, config.target_size)
}


#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> Image {
        let mut data = Vec::new();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data.push(((x + 2 * y + 5 * c) % 17) as f32 / 16.0);
                }
            }
        }
        Image::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn identity_params_reproduce_resized_original() {
        let img = gradient_image(20, 30);
        let same = apply_params(&img, &[], None, &AugmentParams::identity(), [20, 30]);
        assert_eq!(same.image, img);
        let resized = apply_params(&img, &[], None, &AugmentParams::identity(), [10, 45]);
        let expected = img.resized(10, 45);
        for (a, b) in resized.image.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn identity_config_draws_identity() {
        let cfg = AugmentationConfig::identity([16, 16]);
        let p = draw_params(&cfg, &mut augment_rng(1, "x", 0));
        assert_eq!(p, AugmentParams::identity());
    }

    #[test]
    fn same_key_same_draw() {
        let cfg = AugmentationConfig::default();
        let a = draw_params(&cfg, &mut augment_rng(5, "ISIC_1", 3));
        let b = draw_params(&cfg, &mut augment_rng(5, "ISIC_1", 3));
        let c = draw_params(&cfg, &mut augment_rng(5, "ISIC_1", 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn horizontal_flip_mirrors_columns() {
        let img = gradient_image(4, 6);
        let p = AugmentParams {
            horizontal_flip: true,
            ..AugmentParams::identity()
        };
        let out = apply_params(&img, &[], None, &p, [4, 6]);
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(out.image.pixel(y, x), img.pixel(y, 5 - x));
            }
        }
    }

    #[test]
    fn whitening_spans_unit_range() {
        let img = gradient_image(8, 8);
        let p = AugmentParams {
            whitening: true,
            ..AugmentParams::identity()
        };
        let out = apply_params(&img, &[], None, &p, [8, 8]);
        let lo = out.image.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = out.image.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }
}
