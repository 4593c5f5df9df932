//! Bilinear resampling with half-pixel centers (the "align corners off"
//! convention), plus its adjoint for backpropagation.

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f32>,
}

impl AxisTaps {
    fn new(src: usize, dst: usize) -> Self {
        let scale = src as f64 / dst as f64;
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for o in 0..dst {
            let x = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let l = (x.floor() as usize).min(src - 1);
            let h = (l + 1).min(src - 1);
            lo.push(l);
            hi.push(h);
            frac.push((x - l as f64) as f32);
        }
        Self { lo, hi, frac }
    }
}

/// Precomputed interpolation taps for one (source, destination) size pair.
#[derive(Debug, Clone)]
pub struct BilinearPlan {
    src: (usize, usize),
    dst: (usize, usize),
    rows: AxisTaps,
    cols: AxisTaps,
}

impl BilinearPlan {
    pub fn new(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Self {
        Self {
            src: (src_h, src_w),
            dst: (dst_h, dst_w),
            rows: AxisTaps::new(src_h, dst_h),
            cols: AxisTaps::new(src_w, dst_w),
        }
    }

    pub fn src(&self) -> (usize, usize) {
        self.src
    }

    pub fn dst(&self) -> (usize, usize) {
        self.dst
    }

    pub fn apply(&self, src: &[f32], dst: &mut [f32]) {
        let sw = self.src.1;
        let dw = self.dst.1;
        if self.src == self.dst {
            dst.copy_from_slice(src);
            return;
        }
        for (oy, row) in dst.chunks_mut(dw).enumerate() {
            let (y0, y1, fy) = (self.rows.lo[oy], self.rows.hi[oy], self.rows.frac[oy]);
            let r0 = &src[y0 * sw..(y0 + 1) * sw];
            let r1 = &src[y1 * sw..(y1 + 1) * sw];
            for (ox, out) in row.iter_mut().enumerate() {
                let (x0, x1, fx) = (self.cols.lo[ox], self.cols.hi[ox], self.cols.frac[ox]);
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                *out = top + (bottom - top) * fy;
            }
        }
    }

    /// Accumulates the adjoint of `apply` into `grad_src`.
    pub fn adjoint(&self, grad_dst: &[f32], grad_src: &mut [f32]) {
        let sw = self.src.1;
        let dw = self.dst.1;
        if self.src == self.dst {
            for (g, &d) in grad_src.iter_mut().zip(grad_dst) {
                *g += d;
            }
            return;
        }
        for (oy, row) in grad_dst.chunks(dw).enumerate() {
            let (y0, y1, fy) = (self.rows.lo[oy], self.rows.hi[oy], self.rows.frac[oy]);
            for (ox, &g) in row.iter().enumerate() {
                let (x0, x1, fx) = (self.cols.lo[ox], self.cols.hi[ox], self.cols.frac[ox]);
                let top = g * (1.0 - fy);
                let bottom = g * fy;
                grad_src[y0 * sw + x0] += top * (1.0 - fx);
                grad_src[y0 * sw + x1] += top * fx;
                grad_src[y1 * sw + x0] += bottom * (1.0 - fx);
                grad_src[y1 * sw + x1] += bottom * fx;
            }
        }
    }

    pub fn resize_tensor(&self, input: &Tensor) -> Tensor {
        let [n, c, _, _] = input.shape();
        let mut out = Tensor::zeros([n, c, self.dst.0, self.dst.1]);
        for i in 0..n {
            for ch in 0..c {
                let src = input.plane(i, ch).to_vec();
                self.apply(&src, out.plane_mut(i, ch));
            }
        }
        out
    }

    pub fn adjoint_tensor(&self, grad: &Tensor) -> Tensor {
        let [n, c, _, _] = grad.shape();
        let mut out = Tensor::zeros([n, c, self.src.0, self.src.1]);
        for i in 0..n {
            for ch in 0..c {
                let g = grad.plane(i, ch).to_vec();
                self.adjoint(&g, out.plane_mut(i, ch));
            }
        }
        out
    }
}

/// Resizes one plane bilinearly.
pub fn resize_bilinear(src: &[f32], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f32> {
    let mut out = vec![0.0; dst_h * dst_w];
    BilinearPlan::new(src_h, src_w, dst_h, dst_w).apply(src, &mut out);
    out
}

/// Resizes one plane by nearest-neighbour sampling of pixel centers.
pub fn resize_nearest<T: Copy>(src: &[T], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<T> {
    let pick = |o: usize, s: usize, d: usize| (((o as f64 + 0.5) * s as f64 / d as f64).floor() as usize).min(s - 1);
    let mut out = Vec::with_capacity(dst_h * dst_w);
    for oy in 0..dst_h {
        let sy = pick(oy, src_h, dst_h);
        for ox in 0..dst_w {
            out.push(src[sy * src_w + pick(ox, src_w, dst_w)]);
        }
    }
    out
}
