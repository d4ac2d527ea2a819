use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for a fixed list of tensor shapes.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    steps: u64,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = shapes.into_iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        let v = m.clone();
        Adam { config, m, v, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One bias-corrected update. `grads[i] == None` leaves tensor `i` untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<&Tensor>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "Adam parameter count");
        assert_eq!(grads.len(), self.m.len(), "Adam gradient count");
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = grads[i] else { continue };
            assert_eq!(g.shape(), p.shape(), "Adam gradient shape for tensor {i}");
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
