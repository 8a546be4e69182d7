use serde::{Deserialize, Serialize};

use super::params::{Grads, NetworkParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

/// Adam optimizer state; moment blocks mirror the parameter blocks.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .blocks()
            .iter()
            .map(|b| Tensor::zeros(b.value.shape()))
            .collect();
        AdamState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Gradient-descent step (minimizes the loss whose gradient is `grads`).
    pub fn update(&mut self, params: &mut NetworkParams, grads: &Grads) -> Result<()> {
        for (b, g) in params.blocks().iter().zip(grads.blocks()) {
            if b.value.shape() != g.shape() {
                return Err(Error::Shape {
                    block: b.name.clone(),
                    expected: b.value.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of `{}` at flat index {pos} is {} (step {})",
                    b.name,
                    g.data()[pos],
                    self.step
                )));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, block) in params.blocks_mut().iter_mut().enumerate() {
            let g = grads.blocks()[k].data();
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            for (i, p) in block.value.data_mut().iter_mut().enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
