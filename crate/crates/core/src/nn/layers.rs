//! Dense building blocks with hand-written backward passes.
//!
//! Every layer acts on the trailing dimension of its input; leading
//! dimensions are treated as independent rows.

use rand::Rng;

use super::params::{Grads, Init, NetworkParams, ParamId};
use super::tensor::Tensor;
use crate::error::Result;

/// Affine map `y = x W + b` with `W` stored as `[input, output]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        params: &mut NetworkParams,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_init(params, name, input, output, Init::FanIn(input), rng)
    }

    /// Weights and bias start at zero.
    pub fn zeroed(
        params: &mut NetworkParams,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::with_init(params, name, input, output, Init::Zeros, rng)
    }

    fn with_init(
        params: &mut NetworkParams,
        name: &str,
        input: usize,
        output: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = params.register(&format!("{name}.w"), &[input, output], init, rng)?;
        let b = params.register(&format!("{name}.b"), &[output], Init::Zeros, rng)?;
        Ok(Linear {
            name: name.to_string(),
            w,
            b,
            input,
            output,
        })
    }

    pub fn forward(&self, p: &NetworkParams, x: &Tensor) -> Result<Tensor> {
        x.check_cols(&self.name, self.input)?;
        let w = p.get(self.w).data();
        let b = p.get(self.b).data();
        let rows = x.rows();
        let mut y = Vec::with_capacity(rows * self.output);
        for r in 0..rows {
            let start = y.len();
            y.extend_from_slice(b);
            let out = &mut y[start..];
            for (i, &xv) in x.row(r).iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let wrow = &w[i * self.output..(i + 1) * self.output];
                for (o, wv) in out.iter_mut().zip(wrow) {
                    *o += xv * wv;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.output;
        Tensor::new(shape, y)
    }

    /// Accumulates `dW`, `db` into `grads` and returns `dx`.
    pub fn backward(&self, p: &NetworkParams, x: &Tensor, gy: &Tensor, grads: &mut Grads) -> Tensor {
        let w = p.get(self.w).data();
        let rows = x.rows();
        {
            let gw = grads.get_mut(self.w).data_mut();
            for r in 0..rows {
                let g = gy.row(r);
                for (i, &xv) in x.row(r).iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let grow = &mut gw[i * self.output..(i + 1) * self.output];
                    for (a, gv) in grow.iter_mut().zip(g) {
                        *a += xv * gv;
                    }
                }
            }
        }
        {
            let gb = grads.get_mut(self.b).data_mut();
            for r in 0..rows {
                for (a, gv) in gb.iter_mut().zip(gy.row(r)) {
                    *a += gv;
                }
            }
        }
        let mut gx = Tensor::zeros(x.shape());
        for r in 0..rows {
            let g = gy.row(r);
            let out = gx.row_mut(r);
            for (i, o) in out.iter_mut().enumerate() {
                let wrow = &w[i * self.output..(i + 1) * self.output];
                *o = wrow.iter().zip(g).map(|(a, b)| a * b).sum();
            }
        }
        gx
    }
}

pub fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v / (1.0 + (-v).exp()))
}

pub fn silu_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    let mut g = gy.clone();
    for (gv, &v) in g.data_mut().iter_mut().zip(x.data()) {
        let s = 1.0 / (1.0 + (-v).exp());
        *gv *= s * (1.0 + v * (1.0 - s));
    }
    g
}

/// Row-wise layer normalization with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
    pub gain: ParamId,
    pub shift: ParamId,
    pub dim: usize,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormTrace {
    pub normalized: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-10;

    pub fn new(params: &mut NetworkParams, name: &str, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let gain = params.register(&format!("{name}.gain"), &[dim], Init::Ones, rng)?;
        let shift = params.register(&format!("{name}.shift"), &[dim], Init::Zeros, rng)?;
        Ok(LayerNorm {
            name: name.to_string(),
            gain,
            shift,
            dim,
            eps: Self::DEFAULT_EPS,
        })
    }

    pub fn forward(&self, p: &NetworkParams, x: &Tensor) -> Result<(Tensor, LayerNormTrace)> {
        x.check_cols(&self.name, self.dim)?;
        let g = p.get(self.gain).data();
        let s = p.get(self.shift).data();
        let rows = x.rows();
        let d = self.dim as f64;
        let mut normalized = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std.push(is);
            let nrow = normalized.row_mut(r);
            for (n, v) in nrow.iter_mut().zip(row) {
                *n = (v - mean) * is;
            }
            let nrow = normalized.row(r).to_vec();
            for (k, out) in y.row_mut(r).iter_mut().enumerate() {
                *out = nrow[k] * g[k] + s[k];
            }
        }
        Ok((y, LayerNormTrace { normalized, inv_std }))
    }

    pub fn backward(&self, p: &NetworkParams, trace: &LayerNormTrace, gy: &Tensor, grads: &mut Grads) -> Tensor {
        let g = p.get(self.gain).data().to_vec();
        let rows = gy.rows();
        let d = self.dim as f64;
        {
            let gg = grads.get_mut(self.gain).data_mut();
            for r in 0..rows {
                for ((a, gv), n) in gg.iter_mut().zip(gy.row(r)).zip(trace.normalized.row(r)) {
                    *a += gv * n;
                }
            }
        }
        {
            let gs = grads.get_mut(self.shift).data_mut();
            for r in 0..rows {
                for (a, gv) in gs.iter_mut().zip(gy.row(r)) {
                    *a += gv;
                }
            }
        }
        let mut gx = Tensor::zeros(gy.shape());
        for r in 0..rows {
            let n = trace.normalized.row(r);
            let gn: Vec<f64> = gy.row(r).iter().zip(&g).map(|(a, b)| a * b).collect();
            let mean_gn = gn.iter().sum::<f64>() / d;
            let mean_gn_n = gn.iter().zip(n).map(|(a, b)| a * b).sum::<f64>() / d;
            let is = trace.inv_std[r];
            for (k, out) in gx.row_mut(r).iter_mut().enumerate() {
                *out = is * (gn[k] - mean_gn - n[k] * mean_gn_n);
            }
        }
        gx
    }
}

/// Feature-wise linear modulation: `y = x * (1 + gamma) + beta` with
/// `[gamma, beta]` projected from a condition vector. A zero condition with
/// the zero-initialized bias leaves `x` unchanged.
#[derive(Debug, Clone)]
pub struct Film {
    pub proj: Linear,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct FilmTrace {
    cond: Tensor,
    gamma_beta: Tensor,
}

impl Film {
    pub fn new(
        params: &mut NetworkParams,
        name: &str,
        cond_dim: usize,
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Film {
            proj: Linear::new(params, &format!("{name}.film"), cond_dim, 2 * dim, rng)?,
            dim,
        })
    }

    pub fn forward(&self, p: &NetworkParams, x: &Tensor, cond: &[f64]) -> Result<(Tensor, FilmTrace)> {
        x.check_cols(&self.proj.name, self.dim)?;
        let cond = Tensor::new(vec![1, cond.len()], cond.to_vec())?;
        let gamma_beta = self.proj.forward(p, &cond)?;
        let gb = gamma_beta.data();
        let mut y = x.clone();
        for r in 0..y.rows() {
            for (k, v) in y.row_mut(r).iter_mut().enumerate() {
                *v = *v * (1.0 + gb[k]) + gb[self.dim + k];
            }
        }
        Ok((y, FilmTrace { cond, gamma_beta }))
    }

    pub fn backward(
        &self,
        p: &NetworkParams,
        x: &Tensor,
        trace: &FilmTrace,
        gy: &Tensor,
        grads: &mut Grads,
    ) -> Tensor {
        self.backward_with_cond(p, x, trace, gy, grads).0
    }

    /// Like [`Film::backward`], also returning the gradient with respect to
    /// the condition vector.
    pub fn backward_with_cond(
        &self,
        p: &NetworkParams,
        x: &Tensor,
        trace: &FilmTrace,
        gy: &Tensor,
        grads: &mut Grads,
    ) -> (Tensor, Vec<f64>) {
        let gb = trace.gamma_beta.data();
        let mut g_gb = vec![0.0; 2 * self.dim];
        let mut gx = gy.clone();
        for r in 0..gy.rows() {
            let xr = x.row(r);
            for (k, gv) in gx.row_mut(r).iter_mut().enumerate() {
                g_gb[k] += *gv * xr[k];
                g_gb[self.dim + k] += *gv;
                *gv *= 1.0 + gb[k];
            }
        }
        let g_gb = Tensor::new(vec![1, 2 * self.dim], g_gb).expect("film grad shape");
        let gc = self.proj.backward(p, &trace.cond, &g_gb, grads);
        (gx, gc.into_data())
    }
}

/// Numerically stable log-softmax over each row.
pub fn log_softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

pub fn softmax(logits: &Tensor) -> Tensor {
    log_softmax(logits).map(f64::exp)
}

/// Weighted cross-entropy `sum_r w_r * -log softmax(logits_r)[target_r]`.
/// Returns the loss and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize], weights: &[f64]) -> (f64, Tensor) {
    let logp = log_softmax(logits);
    let mut grad = logp.map(f64::exp);
    let mut loss = 0.0;
    for r in 0..logits.rows() {
        let w = weights[r];
        loss -= w * logp.row(r)[targets[r]];
        let row = grad.row_mut(r);
        row[targets[r]] -= 1.0;
        for v in row.iter_mut() {
            *v *= w;
        }
    }
    (loss, grad)
}

/// Sinusoidal embedding of a scalar position, `dim` must be even.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (t * freq).sin();
        out[half + k] = (t * freq).cos();
    }
    out
}
