use rand::Rng;

use super::{join, Module, Param, Slot};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let span = self.dilation * (self.kernel - 1) + 1;
        let oh = (h + 2 * self.padding - span) / self.stride + 1;
        let ow = (w + 2 * self.padding - span) / self.stride + 1;
        (oh, ow)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// 2-D convolution lowered to a matrix product over unfolded patches.
#[derive(Debug, Clone)]
pub struct Conv2d {
    geometry: ConvGeometry,
    /// `[out, in, k, k]`
    pub weight: Param,
    pub bias: Param,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    /// Fan-in scaled uniform weights, zero bias.
    pub fn new(geometry: ConvGeometry, rng: &mut impl Rng) -> Self {
        let fan_in = geometry.patch_len();
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let n = geometry.out_channels * fan_in;
        let value = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        Self {
            geometry,
            weight: Param::new(
                vec![
                    geometry.out_channels,
                    geometry.in_channels,
                    geometry.kernel,
                    geometry.kernel,
                ],
                value,
            ),
            bias: Param::zeros(vec![geometry.out_channels]),
            cached_input: None,
        }
    }

    pub fn geometry(&self) -> ConvGeometry {
        self.geometry
    }

    fn unfold(&self, x: &[f32], h: usize, w: usize, cols: &mut [f32]) {
        let g = &self.geometry;
        let (oh, ow) = g.output_size(h, w);
        let k = g.kernel;
        let mut row = 0;
        for c in 0..g.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki * g.dilation) as isize - g.padding as isize;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            out_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj * g.dilation) as isize - g.padding as isize;
                            *v = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn fold_add(&self, cols: &[f32], h: usize, w: usize, dx: &mut [f32]) {
        let g = &self.geometry;
        let (oh, ow) = g.output_size(h, w);
        let k = g.kernel;
        let mut row = 0;
        for c in 0..g.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * g.stride + ki * g.dilation) as isize - g.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * g.stride + kj * g.dilation) as isize - g.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let g = self.geometry;
        let [n, c, h, w] = x.shape();
        assert_eq!(c, g.in_channels, "conv expects {} input channels", g.in_channels);
        let (oh, ow) = g.output_size(h, w);
        let spatial = oh * ow;
        let patch = g.patch_len();
        let mut out = Tensor::zeros([n, g.out_channels, oh, ow]);
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; patch * spatial] };
        for i in 0..n {
            let b: &[f32] = if g.is_pointwise() {
                x.sample(i)
            } else {
                self.unfold(x.sample(i), h, w, &mut cols);
                &cols
            };
            let y = out.sample_mut(i);
            for (o, bias) in self.bias.value.iter().enumerate() {
                y[o * spatial..(o + 1) * spatial].iter_mut().for_each(|v| *v = *bias);
            }
            // y[out, spatial] += W[out, patch] * cols[patch, spatial]
            unsafe {
                matrixmultiply::sgemm(
                    g.out_channels,
                    patch,
                    spatial,
                    1.0,
                    self.weight.value.as_ptr(),
                    patch as isize,
                    1,
                    b.as_ptr(),
                    spatial as isize,
                    1,
                    1.0,
                    y.as_mut_ptr(),
                    spatial as isize,
                    1,
                );
            }
        }
        self.cached_input = if train { Some(x.clone()) } else { None };
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.geometry;
        let x = self
            .cached_input
            .take()
            .expect("conv backward called without a training forward pass");
        let [n, _, h, w] = x.shape();
        let (oh, ow) = g.output_size(h, w);
        let spatial = oh * ow;
        let patch = g.patch_len();
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; patch * spatial] };
        let mut dcols = vec![0.0; patch * spatial];
        for i in 0..n {
            let dy = grad.sample(i);
            for (o, gb) in self.bias.grad.iter_mut().enumerate() {
                *gb += dy[o * spatial..(o + 1) * spatial].iter().sum::<f32>();
            }
            let b: &[f32] = if g.is_pointwise() {
                x.sample(i)
            } else {
                self.unfold(x.sample(i), h, w, &mut cols);
                &cols
            };
            unsafe {
                // dW[out, patch] += dY[out, spatial] * cols^T[spatial, patch]
                matrixmultiply::sgemm(
                    g.out_channels,
                    spatial,
                    patch,
                    1.0,
                    dy.as_ptr(),
                    spatial as isize,
                    1,
                    b.as_ptr(),
                    1,
                    spatial as isize,
                    1.0,
                    self.weight.grad.as_mut_ptr(),
                    patch as isize,
                    1,
                );
                // dcols[patch, spatial] = W^T[patch, out] * dY[out, spatial]
                matrixmultiply::sgemm(
                    patch,
                    g.out_channels,
                    spatial,
                    1.0,
                    self.weight.value.as_ptr(),
                    1,
                    patch as isize,
                    dy.as_ptr(),
                    spatial as isize,
                    1,
                    0.0,
                    dcols.as_mut_ptr(),
                    spatial as isize,
                    1,
                );
            }
            if g.is_pointwise() {
                dx.sample_mut(i).copy_from_slice(&dcols);
            } else {
                self.fold_add(&dcols, h, w, dx.sample_mut(i));
            }
        }
        dx
    }
}

impl Module for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}
