//! Minimal layer library with hand-written backward passes.
//!
//! Layers cache whatever they need during a training-mode forward pass and
//! consume it in `backward`. Parameters and persistent buffers are exposed by
//! path through [`Module::visit`], which is what checkpoints and the
//! optimizer walk.

mod adam;
mod conv;
mod linear;
mod norm;
pub mod resize;

pub use adam::Adam;
pub use conv::{Conv2d, ConvGeometry};
pub use linear::Linear;
pub use norm::{BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use resize::BilinearPlan;

use crate::tensor::Tensor;

/// A trainable array with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub(crate) moment1: Vec<f32>,
    pub(crate) moment2: Vec<f32>,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let n = value.len();
        Self {
            shape,
            value,
            grad: vec![0.0; n],
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Drops optimizer state, e.g. when the weights are reused for a new run.
    pub fn reset_moments(&mut self) {
        self.moment1.iter_mut().for_each(|m| *m = 0.0);
        self.moment2.iter_mut().for_each(|m| *m = 0.0);
    }
}

/// A persistent non-trainable array (batch-norm running statistics).
#[derive(Debug, Clone)]
pub struct Buffer {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
}

pub enum Slot<'a> {
    Param(&'a mut Param),
    Buffer(&'a mut Buffer),
}

impl Slot<'_> {
    pub fn shape(&self) -> &[usize] {
        match self {
            Slot::Param(p) => &p.shape,
            Slot::Buffer(b) => &b.shape,
        }
    }

    pub fn values(&self) -> &[f32] {
        match self {
            Slot::Param(p) => &p.value,
            Slot::Buffer(b) => &b.value,
        }
    }

    pub fn values_mut(&mut self) -> &mut Vec<f32> {
        match self {
            Slot::Param(p) => &mut p.value,
            Slot::Buffer(b) => &mut b.value,
        }
    }
}

/// Anything holding named parameters or buffers.
pub trait Module {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                p.zero_grad();
            }
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Vec<bool>,
}

impl Relu {
    pub fn forward(&mut self, mut x: Tensor, train: bool) -> Tensor {
        if train {
            self.mask.clear();
            self.mask.extend(x.data().iter().map(|&v| v > 0.0));
        }
        for v in x.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        x
    }

    pub fn backward(&mut self, mut grad: Tensor) -> Tensor {
        for (g, &keep) in grad.data_mut().iter_mut().zip(&self.mask) {
            if !keep {
                *g = 0.0;
            }
        }
        grad
    }
}

/// Convolution, batch norm, ReLU: the unit every stage is built from.
#[derive(Debug, Clone)]
pub struct ConvBnRelu {
    pub conv: Conv2d,
    pub norm: BatchNorm2d,
    relu: Relu,
}

impl ConvBnRelu {
    pub fn new(conv: Conv2d) -> Self {
        let norm = BatchNorm2d::new(conv.geometry().out_channels);
        Self {
            conv,
            norm,
            relu: Relu::default(),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.geometry().out_channels
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let y = self.conv.forward(x, train);
        let y = self.norm.forward(y, train);
        self.relu.forward(y, train)
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        let g = self.relu.backward(grad);
        let g = self.norm.backward(g);
        self.conv.backward(&g)
    }
}

impl Module for ConvBnRelu {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "bn"), f);
    }
}
