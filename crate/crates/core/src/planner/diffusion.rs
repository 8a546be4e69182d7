//! Uniform-mixing discrete diffusion over node and edge categories.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{ActivationGraph, NodeRole, EDGE_CATEGORIES};
use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 30;
const COSINE_OFFSET: f64 = 0.008;

/// Per-step corruption strengths `beta_1..beta_T`, shared by nodes and edges.
/// `Q_t = (1 - beta_t) I + beta_t / a * 11^T`, so the cumulative kernel is
/// `Qbar_t = abar_t I + (1 - abar_t) / a * 11^T` with `abar_t = prod (1 - beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Default for TransitionSchedule {
    fn default() -> Self {
        Self::cosine(DEFAULT_STEPS).expect("default schedule")
    }
}

impl TransitionSchedule {
    /// Cosine schedule with `abar_t = f(t) / f(0)`, `f(t) = cos^2(((t/T + s)/(1 + s)) pi/2)`.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        let f = |t: usize| {
            let x = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
            (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let betas = (1..=steps)
            .map(|t| {
                if t == steps {
                    1.0
                } else {
                    (1.0 - f(t) / f(t - 1)).clamp(0.0, 1.0)
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidArgument("betas must lie in [0, 1]".into()));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(TransitionSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `1 <= t <= T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `abar_t` for `0 <= t <= T`, with `abar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_step(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "step {t} outside {min}..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Single-step matrix `Q_t` for `a` categories, row-major `a x a`.
    pub fn q(&self, t: usize, a: usize) -> Result<Vec<f64>> {
        self.check_step(t, 1)?;
        Ok(mixing(1.0 - self.beta(t), a))
    }

    /// Cumulative matrix `Qbar_t` for `a` categories; `Qbar_0 = I`.
    pub fn q_bar(&self, t: usize, a: usize) -> Result<Vec<f64>> {
        self.check_step(t, 0)?;
        Ok(mixing(self.alpha_bar(t), a))
    }

    /// Hex prefix of a hash over the betas.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.betas {
            h.update(b.to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }
}

fn mixing(keep: f64, a: usize) -> Vec<f64> {
    let off = (1.0 - keep) / a as f64;
    let mut m = vec![off; a * a];
    for i in 0..a {
        m[i * a + i] += keep;
    }
    m
}

/// Row-major matrix product of two `a x a` matrices.
pub fn mat_mul(x: &[f64], y: &[f64], a: usize) -> Vec<f64> {
    let mut out = vec![0.0; a * a];
    for i in 0..a {
        for k in 0..a {
            let v = x[i * a + k];
            for j in 0..a {
                out[i * a + j] += v * y[k * a + j];
            }
        }
    }
    out
}

pub fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Corrupt `g` to step `t`: every node and upper-triangle edge category is
/// resampled from its row of `Qbar_t`.
pub fn forward_noise_graph(
    g: &ActivationGraph,
    schedule: &TransitionSchedule,
    t: usize,
    rng: &mut impl Rng,
) -> Result<ActivationGraph> {
    schedule.check_step(t, 1)?;
    let kn = schedule.q_bar(t, NodeRole::COUNT)?;
    let ke = schedule.q_bar(t, EDGE_CATEGORIES)?;
    let n = g.len();
    let mut out = ActivationGraph::empty(n);
    for i in 0..n {
        let c = g.roles[i].index();
        out.roles[i] = NodeRole::from_index(sample_categorical(&kn[c * 3..c * 3 + 3], rng));
    }
    for i in 0..n {
        for j in i + 1..n {
            let c = g.edge(i, j) as usize;
            let k = sample_categorical(&ke[c * 2..c * 2 + 2], rng);
            out.set_edge(i, j, k == 1)?;
        }
    }
    Ok(out)
}

/// `q(x_{t-1} = k | x_t = xt, x_0 = x0)` for every `k`.
pub fn posterior(schedule: &TransitionSchedule, t: usize, a: usize, xt: usize, x0: usize) -> Result<Vec<f64>> {
    schedule.check_step(t, 1)?;
    let q = schedule.q(t, a)?;
    let qb = schedule.q_bar(t - 1, a)?;
    let mut p: Vec<f64> = (0..a).map(|k| q[k * a + xt] * qb[x0 * a + k]).collect();
    let z: f64 = p.iter().sum();
    if !(z > 0.0) {
        return Err(Error::Degenerate(format!("posterior at step {t} has zero mass")));
    }
    p.iter_mut().for_each(|v| *v /= z);
    Ok(p)
}

/// Reverse-step distribution `sum_x0 p0(x0) q(x_{t-1} | x_t, x0)`.
pub fn reverse_distribution(
    schedule: &TransitionSchedule,
    t: usize,
    xt: usize,
    p0: &[f64],
) -> Result<Vec<f64>> {
    let a = p0.len();
    let mut out = vec![0.0; a];
    for (x0, &w) in p0.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let post = posterior(schedule, t, a, xt, x0)?;
        for (o, v) in out.iter_mut().zip(&post) {
            *o += w * v;
        }
    }
    let z: f64 = out.iter().sum();
    if (z - 1.0).abs() > 1e-6 {
        return Err(Error::Degenerate(format!("reverse distribution sums to {z}")));
    }
    Ok(out)
}
