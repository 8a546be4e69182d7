use rand::Rng;

use super::layers::{silu, silu_backward, Linear};
use super::params::{Grads, NetworkParams};
use super::tensor::Tensor;
use super::Module;
use crate::error::Result;

/// Stack of affine layers with SiLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
}

impl Mlp {
    /// `widths = [input, hidden.., output]`.
    pub fn new(params: &mut NetworkParams, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers })
    }

    /// Same as [`Mlp::new`] but the final layer starts at zero.
    pub fn with_zero_head(
        params: &mut NetworkParams,
        name: &str,
        widths: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let n = format!("{name}.{i}");
                if i == last {
                    Linear::zeroed(params, &n, w[0], w[1], rng)
                } else {
                    Linear::new(params, &n, w[0], w[1], rng)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output
    }

    pub fn run(&self, p: &NetworkParams, x: &Tensor) -> Result<(Tensor, MlpTrace)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(p, &h)?;
            inputs.push(h);
            if i + 1 < self.layers.len() {
                h = silu(&z);
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, MlpTrace { inputs, pre }))
    }

    pub fn run_backward(&self, p: &NetworkParams, trace: &MlpTrace, gy: &Tensor, grads: &mut Grads) -> Tensor {
        let mut g = gy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                g = silu_backward(&trace.pre[i], &g);
            }
            g = layer.backward(p, &trace.inputs[i], &g, grads);
        }
        g
    }
}

impl Module for Mlp {
    type Input = Tensor;
    type Trace = MlpTrace;

    fn forward(&self, p: &NetworkParams, input: &Tensor) -> Result<(Tensor, MlpTrace)> {
        self.run(p, input)
    }

    fn backward(&self, p: &NetworkParams, trace: &MlpTrace, upstream: &Tensor) -> Result<Grads> {
        let mut grads = Grads::zeros_like(p);
        self.run_backward(p, trace, upstream, &mut grads);
        Ok(grads)
    }
}
