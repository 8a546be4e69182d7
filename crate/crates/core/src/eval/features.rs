//! Short-time spectral band energies of CSI power series.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub window: usize,
    pub hop: usize,
    pub bands: usize,
    /// Evenly spaced subcarriers whose band energies are averaged.
    pub subcarriers: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            window: 64,
            hop: 16,
            bands: 8,
            subcarriers: 8,
        }
    }
}

/// Hann-windowed STFT with log-spaced band pooling. The feature vector holds,
/// per band, the mean, maximum and minimum over frames of the log band
/// energy, band-major.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    fft: Arc<dyn Fft<f64>>,
    hann: Vec<f64>,
    edges: Vec<usize>,
}

pub const STATS_PER_BAND: usize = 3;
const LOG_FLOOR: f64 = 1e-12;

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        if cfg.window < 4 || cfg.hop == 0 || cfg.bands == 0 || cfg.subcarriers == 0 {
            return Err(Error::InvalidArgument("feature window, hop, bands and subcarriers must be positive".into()));
        }
        let half = cfg.window / 2;
        if cfg.bands > half {
            return Err(Error::InvalidArgument(format!("{} bands exceed {half} frequency bins", cfg.bands)));
        }
        let mut edges = vec![1usize];
        for k in 1..=cfg.bands {
            let e = ((half + 1) as f64).powf(k as f64 / cfg.bands as f64).floor() as usize;
            let prev = *edges.last().unwrap();
            let remaining = cfg.bands - k;
            edges.push(e.max(prev + 1).min(half + 1 - remaining));
        }
        let hann = (0..cfg.window)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / cfg.window as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(cfg.window);
        Ok(FeatureExtractor { cfg, fft, hann, edges })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn dim(&self) -> usize {
        self.cfg.bands * STATS_PER_BAND
    }

    /// Band boundaries in FFT bins; band `k` covers `edges[k]..edges[k + 1]`.
    pub fn band_edges(&self) -> &[usize] {
        &self.edges
    }

    fn frame_bands(&self, series: &[f64]) -> Vec<Vec<f64>> {
        let frames = (series.len() - self.cfg.window) / self.cfg.hop + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.window];
        (0..frames)
            .map(|f| {
                let seg = &series[f * self.cfg.hop..f * self.cfg.hop + self.cfg.window];
                for ((b, &x), &h) in buf.iter_mut().zip(seg).zip(&self.hann) {
                    *b = Complex64::new(x * h, 0.0);
                }
                self.fft.process(&mut buf);
                self.edges
                    .windows(2)
                    .map(|e| buf[e[0]..e[1]].iter().map(|c| c.norm_sqr()).sum())
                    .collect()
            })
            .collect()
    }

    /// Features of a power matrix laid out `[n * packets + w]`.
    pub fn extract(&self, power: &[f64], subcarriers: usize, packets: usize) -> Result<Vec<f64>> {
        if power.len() != subcarriers * packets || subcarriers == 0 {
            return Err(Error::Shape {
                block: "features".into(),
                expected: vec![subcarriers, packets],
                actual: vec![power.len()],
            });
        }
        if packets < self.cfg.window {
            return Err(Error::InvalidArgument(format!(
                "{packets} packets are shorter than the STFT window {}",
                self.cfg.window
            )));
        }
        let picks = self.cfg.subcarriers.min(subcarriers);
        let frames = (packets - self.cfg.window) / self.cfg.hop + 1;
        let mut acc = vec![vec![0.0; self.cfg.bands]; frames];
        for k in 0..picks {
            let n = (2 * k + 1) * subcarriers / (2 * picks);
            let row = &power[n * packets..(n + 1) * packets];
            let mean = row.iter().sum::<f64>() / packets as f64;
            let series: Vec<f64> = if mean > 0.0 {
                row.iter().map(|p| p / mean - 1.0).collect()
            } else {
                vec![0.0; packets]
            };
            for (a, bands) in acc.iter_mut().zip(self.frame_bands(&series)) {
                for (x, e) in a.iter_mut().zip(bands) {
                    *x += e / picks as f64;
                }
            }
        }
        let mut out = Vec::with_capacity(self.dim());
        for b in 0..self.cfg.bands {
            let logs: Vec<f64> = acc.iter().map(|f| (f[b] + LOG_FLOOR).ln()).collect();
            out.push(logs.iter().sum::<f64>() / frames as f64);
            out.push(logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            out.push(logs.iter().cloned().fold(f64::INFINITY, f64::min));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature vector".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_band_edges_cover_bins() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let e = ex.band_edges();
        assert_eq!(e.len(), 9);
        assert_eq!(e[0], 1);
        assert_eq!(*e.last().unwrap(), 33);
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(ex.dim(), 24);
    }

    #[test]
    fn sinusoid_energy_lands_in_its_band() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let packets = 256;
        let bin = 10.0;
        let power: Vec<f64> = (0..packets)
            .map(|w| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * bin * w as f64 / 64.0).cos())
            .collect();
        let f = ex.extract(&power, 1, packets).unwrap();
        let means: Vec<f64> = (0..8).map(|b| f[3 * b]).collect();
        let top = means.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let e = ex.band_edges();
        assert!(e[top] <= 10 && 10 < e[top + 1]);
    }

    #[test]
    fn constant_power_gives_floor_features() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        let f = ex.extract(&vec![2.0; 4 * 128], 4, 128).unwrap();
        assert!(f.iter().all(|v| (*v - LOG_FLOOR.ln()).abs() < 1e-6));
    }

    #[test]
    fn short_series_rejected() {
        let ex = FeatureExtractor::new(FeatureConfig::default()).unwrap();
        assert!(ex.extract(&vec![1.0; 32], 1, 32).is_err());
    }
}
