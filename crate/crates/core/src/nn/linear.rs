use rand::Rng;

use super::{join, Module, Param, Slot};

/// Fully connected layer over flat feature vectors.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Param,
    pub bias: Param,
    cached_input: Option<Vec<f32>>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / in_features as f64).sqrt() as f32;
        let value = (0..in_features * out_features)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            in_features,
            out_features,
            weight: Param::new(vec![out_features, in_features], value),
            bias: Param::zeros(vec![out_features]),
            cached_input: None,
        }
    }

    /// `x` holds `batch` rows of `in_features` values.
    pub fn forward(&mut self, x: &[f32], batch: usize, train: bool) -> Vec<f32> {
        let mut out = Vec::with_capacity(batch * self.out_features);
        for row in x.chunks(self.in_features) {
            for o in 0..self.out_features {
                let w = &self.weight.value[o * self.in_features..(o + 1) * self.in_features];
                let dot: f32 = w.iter().zip(row).map(|(a, b)| a * b).sum();
                out.push(dot + self.bias.value[o]);
            }
        }
        self.cached_input = train.then(|| x.to_vec());
        out
    }

    pub fn backward(&mut self, grad: &[f32]) -> Vec<f32> {
        let x = self
            .cached_input
            .take()
            .expect("linear backward called without a training forward pass");
        let mut dx = vec![0.0; x.len()];
        for (row, (g, dxr)) in x
            .chunks(self.in_features)
            .zip(grad.chunks(self.out_features).zip(dx.chunks_mut(self.in_features)))
        {
            for (o, &go) in g.iter().enumerate() {
                self.bias.grad[o] += go;
                let base = o * self.in_features;
                for k in 0..self.in_features {
                    self.weight.grad[base + k] += go * row[k];
                    dxr[k] += go * self.weight.value[base + k];
                }
            }
        }
        dx
    }
}

impl Module for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_>)) {
        f(&join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(&join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}
