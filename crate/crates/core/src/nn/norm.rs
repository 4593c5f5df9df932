use super::{join, Buffer, Module, Param, Slot};
use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics and folds them into the running estimates; eval mode uses the
/// running estimates only.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    cache: Option<NormCache>,
}

#[derive(Debug, Clone)]
struct NormCache {
    normalized: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(vec![channels], vec![1.0; channels]),
            beta: Param::zeros(vec![channels]),
            running_mean: Buffer {
                shape: vec![channels],
                value: vec![0.0; channels],
            },
            running_var: Buffer {
                shape: vec![channels],
                value: vec![1.0; channels],
            },
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn forward(&mut self, mut x: Tensor, train: bool) -> Tensor {
        let [n, c, h, w] = x.shape();
        let count = n * h * w;
        if !train {
            for ch in 0..c {
                let inv = 1.0 / (self.running_var.value[ch] + BN_EPS).sqrt();
                let scale = self.gamma.value[ch] * inv;
                let shift = self.beta.value[ch] - self.running_mean.value[ch] * scale;
                for i in 0..n {
                    x.plane_mut(i, ch).iter_mut().for_each(|v| *v = *v * scale + shift);
                }
            }
            self.cache = None;
            return x;
        }
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let mut sum = 0.0f64;
            for i in 0..n {
                sum += x.plane(i, ch).iter().map(|&v| v as f64).sum::<f64>();
            }
            let mean = sum / count as f64;
            let mut sq = 0.0f64;
            for i in 0..n {
                sq += x
                    .plane(i, ch)
                    .iter()
                    .map(|&v| (v as f64 - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / count as f64;
            let unbiased = if count > 1 { sq / (count - 1) as f64 } else { var };
            let inv = 1.0 / (var + BN_EPS as f64).sqrt();
            inv_std[ch] = inv as f32;
            let rm = &mut self.running_mean.value[ch];
            *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * mean as f32;
            let rv = &mut self.running_var.value[ch];
            *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * unbiased as f32;
            let mean = mean as f32;
            for i in 0..n {
                x.plane_mut(i, ch)
                    .iter_mut()
                    .for_each(|v| *v = (*v - mean) * inv as f32);
            }
        }
        let normalized = x.clone();
        for ch in 0..c {
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for i in 0..n {
                x.plane_mut(i, ch).iter_mut().for_each(|v| *v = *v * g + b);
            }
        }
        self.cache = Some(NormCache {
            normalized,
            inv_std,
        });
        x
    }

    pub fn backward(&mut self, mut grad: Tensor) -> Tensor {
        let cache = self
            .cache
            .take()
            .expect("batch norm backward called without a training forward pass");
        let [n, c, h, w] = grad.shape();
        let count = (n * h * w) as f32;
        for ch in 0..c {
            let mut sum_g = 0.0f32;
            let mut sum_gx = 0.0f32;
            for i in 0..n {
                for (g, xh) in grad.plane(i, ch).iter().zip(cache.normalized.plane(i, ch)) {
                    sum_g += g;
                    sum_gx += g * xh;
                }
            }
            self.beta.grad[ch] += sum_g;
            self.gamma.grad[ch] += sum_gx;
            let scale = self.gamma.value[ch] * cache.inv_std[ch] / count;
            for i in 0..n {
                let xh = cache.normalized.plane(i, ch).to_vec();
                for (g, xh) in grad.plane_mut(i, ch).iter_mut().zip(xh) {
                    *g = scale * (count * *g - sum_g - xh * sum_gx);
                }
            }
        }
        grad
    }
}

impl Module for BatchNorm2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "gamma"), Slot::Param(&mut self.gamma));
        f(&join(prefix, "beta"), Slot::Param(&mut self.beta));
        f(&join(prefix, "running_mean"), Slot::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), Slot::Buffer(&mut self.running_var));
    }
}
