//! Variance schedule of the continuous diffusion over signal windows.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    /// `betas[t - 1]` is `beta_t` for `t = 1..=T`.
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced `beta` from `beta_1` to `beta_T`.
    pub fn linear(steps: usize, beta_1: f64, beta_t: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_1
                } else {
                    beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidArgument("every beta must lie in (0, 1)".into()));
        }
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_bar_t`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Stable identifier of the schedule values.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        for b in &self.betas {
            h.update(b.to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear(500, 1e-4, 0.04).expect("default schedule")
    }
}

pub fn standard_normal_vec(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// `x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps`; returns `(x_t, eps)`.
pub fn forward_diffuse(x0: &[f64], schedule: &NoiseSchedule, t: usize, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    schedule.check_t(t)?;
    let eps = standard_normal_vec(x0.len(), rng);
    Ok((diffuse_with(x0, schedule, t, &eps), eps))
}

pub fn diffuse_with(x0: &[f64], schedule: &NoiseSchedule, t: usize, eps: &[f64]) -> Vec<f64> {
    let a = schedule.alpha_bar(t).sqrt();
    let s = (1.0 - schedule.alpha_bar(t)).sqrt();
    x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect()
}

/// One forward transition `x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) v`.
pub fn forward_step(prev: &[f64], schedule: &NoiseSchedule, t: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    schedule.check_t(t)?;
    let b = schedule.beta(t);
    let keep = (1.0 - b).sqrt();
    let add = b.sqrt();
    Ok(prev
        .iter()
        .map(|x| keep * x + add * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect())
}

/// Score of `q(x_t | x_0)`: `-(x_t - sqrt(abar) x_0) / (1 - abar)`.
pub fn score_target(xt: &[f64], x0: &[f64], schedule: &NoiseSchedule, t: usize) -> Vec<f64> {
    let a = schedule.alpha_bar(t);
    xt.iter()
        .zip(x0)
        .map(|(x, x0)| -(x - a.sqrt() * x0) / (1.0 - a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn default_schedule_invariants() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 500);
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(500) - 0.04).abs() < 1e-15);
        assert!(s.betas().iter().all(|b| *b > 0.0 && *b < 1.0));
        for t in 1..=500 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!(s.alpha_bar(500) < 1e-3);
    }

    #[test]
    fn invalid_betas_rejected() {
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.0]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0]).is_err());
        assert!(NoiseSchedule::linear(0, 1e-4, 0.02).is_err());
    }

    #[test]
    fn score_target_is_scaled_noise() {
        let s = NoiseSchedule::default();
        let mut r = rng::stream(1, 2);
        let x0: Vec<f64> = (0..32).map(|i| (i as f64 * 0.3).sin()).collect();
        for t in [1, 17, 250, 500] {
            let (xt, eps) = forward_diffuse(&x0, &s, t, &mut r).unwrap();
            let target = score_target(&xt, &x0, &s, t);
            let sd = (1.0 - s.alpha_bar(t)).sqrt();
            for (g, e) in target.iter().zip(&eps) {
                assert!((g + e / sd).abs() <= 1e-9 * (1.0 + (e / sd).abs()));
            }
        }
    }

    #[test]
    fn timestep_bounds_checked() {
        let s = NoiseSchedule::default();
        let mut r = rng::stream(0, 0);
        assert!(forward_diffuse(&[0.0], &s, 0, &mut r).is_err());
        assert!(forward_diffuse(&[0.0], &s, 501, &mut r).is_err());
    }
}
