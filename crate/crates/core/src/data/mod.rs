//! Samples, on-disk dataset layout, augmentation and the synthetic lesion
//! generator.

mod augment;
mod io;
mod synthetic;

pub use augment::{
    apply_params, augment_cls, augment_rng, augment_seg, draw_params, preprocess, warp_plane, Affine,
    AugmentParams, AugmentationConfig, Fill, Interp, Warped,
};
pub use io::{
    export_cls_dataset, export_seg_dataset, list_image_ids, load_cls_dataset, load_seg_dataset,
    read_class_labels, LABELS_FILE,
};
pub use synthetic::{generate_synthetic_dataset, EllipseLesion, SyntheticConfig, SyntheticDataset};

use crate::error::{Error, Result};
use crate::losses::GroundTruthMask;
use crate::nn::resize::{resize_bilinear, resize_nearest};
use crate::tensor::{Grid, Tensor};

/// Channel-planar image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::contract("image dimensions must be positive"));
        }
        if data.len() != height * width * channels {
            return Err(Error::contract(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Pixel `(row, col)` as per-channel values.
    pub fn pixel(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.channels)
            .map(|c| self.plane(c)[row * self.width + col])
            .collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec([1, self.channels, self.height, self.width], self.data.clone())
            .expect("image dimensions are consistent")
    }

    pub fn resized(&self, height: usize, width: usize) -> Image {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            data.extend(resize_bilinear(self.plane(c), self.height, self.width, height, width));
        }
        Image {
            height,
            width,
            channels: self.channels,
            data,
        }
    }
}

pub fn resize_mask(mask: &GroundTruthMask, height: usize, width: usize) -> GroundTruthMask {
    let values = resize_nearest(mask.values(), mask.height(), mask.width(), height, width);
    GroundTruthMask::new(height, width, values).expect("nearest resize keeps labels binary")
}

pub fn resize_grid(grid: &Grid<f32>, height: usize, width: usize) -> Grid<f32> {
    let values = resize_bilinear(grid.values(), grid.height(), grid.width(), height, width);
    Grid::new(height, width, values).expect("positive resize target")
}

/// An image with a pixel-level lesion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub id: String,
    pub image: Image,
    pub mask: GroundTruthMask,
    /// Image-level class, when known.
    pub label: Option<usize>,
}

impl SegSample {
    pub fn new(id: impl Into<String>, image: Image, mask: GroundTruthMask, label: Option<usize>) -> Result<Self> {
        let id = id.into();
        if image.height() != mask.height() || image.width() != mask.width() {
            return Err(Error::contract(format!(
                "sample {id}: image is {}x{} but mask is {}x{}",
                image.height(),
                image.width(),
                mask.height(),
                mask.width()
            )));
        }
        Ok(Self {
            id,
            image,
            mask,
            label,
        })
    }
}

/// An image with an image-level class label.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsSample {
    pub id: String,
    pub image: Image,
    pub label: usize,
}
