use super::{Module, Slot};

/// Adaptive-moment gradient descent with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub weight_decay: f32,
    step: u32,
}

impl Adam {
    pub fn new(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Applies one update to every parameter whose path passes `filter`.
    pub fn step(&mut self, module: &mut dyn Module, filter: &dyn Fn(&str) -> bool) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps, wd) = (
            self.beta1,
            self.beta2,
            self.learning_rate,
            self.epsilon,
            self.weight_decay,
        );
        module.visit("", &mut |path, slot| {
            let Slot::Param(p) = slot else { return };
            if !filter(path) {
                return;
            }
            for i in 0..p.value.len() {
                let g = p.grad[i] + wd * p.value[i];
                p.moment1[i] = b1 * p.moment1[i] + (1.0 - b1) * g;
                p.moment2[i] = b2 * p.moment2[i] + (1.0 - b2) * g * g;
                let m_hat = p.moment1[i] / c1;
                let v_hat = p.moment2[i] / c2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}
