//! Recognition and generation metrics.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use rand_distr::{Distribution, StandardNormal};

pub const SSIM_WINDOW: usize = 11;

/// Accuracy degradation rate `(acc_org - acc_sf) / acc_org`.
pub fn compute_adr(acc_org: f64, acc_sf: f64) -> Result<f64> {
    if !(acc_org > 0.0) {
        return Err(Error::InvalidArgument("ADR needs a positive baseline accuracy".into()));
    }
    Ok((acc_org - acc_sf) / acc_org)
}

fn window_stats(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
        cov += (x - ma) * (y - mb);
    }
    (ma, mb, va / n, vb / n, cov / n)
}

fn ssim_parts(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("SSIM of empty signals".into()));
    }
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let range = hi - lo;
    if range == 0.0 {
        return Ok((1.0, 1.0));
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let win = SSIM_WINDOW.min(a.len());
    let count = a.len() - win + 1;
    let (mut total, mut structure) = (0.0, 0.0);
    for s in 0..count {
        let (ma, mb, va, vb, cov) = window_stats(&a[s..s + win], &b[s..s + win]);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        total += lum * cs;
        structure += cs;
    }
    Ok((total / count as f64, structure / count as f64))
}

/// Mean windowed SSIM (window 11, stride 1) with `L` the joint dynamic range.
pub fn ssim_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(ssim_parts(a, b)?.0)
}

/// Mean contrast-structure term of [`ssim_1d`].
pub fn ssim_structure_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(ssim_parts(a, b)?.1)
}

/// Largest SSIM of `x` against any reference signal, and its index.
pub fn nearest_ssim(x: &[f64], references: &[Vec<f64>]) -> Result<(f64, usize)> {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, r) in references.iter().enumerate() {
        let s = ssim_1d(x, r)?;
        if s > best.0 {
            best = (s, i);
        }
    }
    Ok(best)
}

/// Fixed random feature extractor: a bank of seeded 1-D convolution
/// filters, each pooled to the mean and standard deviation of its ReLU
/// response.
#[derive(Debug, Clone)]
pub struct FidExtractor {
    filters: Vec<Vec<f64>>,
}

impl FidExtractor {
    pub const FILTERS: usize = 16;
    pub const KERNEL: usize = 9;

    pub fn new(seed: u64) -> Self {
        let mut r = rng::stream(seed, streams::FID);
        let scale = 1.0 / (Self::KERNEL as f64).sqrt();
        let filters = (0..Self::FILTERS)
            .map(|_| {
                (0..Self::KERNEL)
                    .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut r))
                    .collect()
            })
            .collect();
        FidExtractor { filters }
    }

    pub fn dim(&self) -> usize {
        2 * self.filters.len()
    }

    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        let k = Self::KERNEL.min(x.len());
        let count = x.len() - k + 1;
        for f in &self.filters {
            let resp: Vec<f64> = (0..count)
                .map(|s| x[s..s + k].iter().zip(f).map(|(a, b)| a * b).sum::<f64>().max(0.0))
                .collect();
            let m = resp.iter().sum::<f64>() / count as f64;
            let v = resp.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / count as f64;
            out.push(m);
            out.push(v.sqrt());
        }
        out
    }
}

fn gaussian_fit(feats: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = feats.len() as f64;
    let d = feats[0].len();
    let mut mean = vec![0.0; d];
    for f in feats {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for f in feats {
        for i in 0..d {
            let di = f[i] - mean[i];
            for j in 0..d {
                cov[(i, j)] += di * (f[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    (mean, cov)
}

/// Principal square root of a symmetric positive semi-definite matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = 1e-9 * max.max(1e-300);
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(Error::NonFinite("covariance is not positive semi-definite".into()));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Frechet distance between Gaussian fits of two feature sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (ma, ca) = gaussian_fit(a);
    let (mb, cb) = gaussian_fit(b);
    let mean_term: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = psd_sqrt(&ca)?;
    let inner = &sa * &cb * &sa;
    let cross = psd_sqrt(&inner)?.trace();
    Ok((mean_term + ca.trace() + cb.trace() - 2.0 * cross).max(0.0))
}

/// FID between two signal sets under the seeded extractor.
pub fn fid_1d(set_a: &[Vec<f64>], set_b: &[Vec<f64>], extractor_seed: u64) -> Result<f64> {
    if set_a.len() < 32 || set_b.len() < 32 {
        return Err(Error::InvalidArgument(format!(
            "FID needs at least 32 signals per set, got {} and {}",
            set_a.len(),
            set_b.len()
        )));
    }
    let ex = FidExtractor::new(extractor_seed);
    let fa: Vec<Vec<f64>> = set_a.iter().map(|x| ex.features(x)).collect();
    let fb: Vec<Vec<f64>> = set_b.iter().map(|x| ex.features(x)).collect();
    frechet_distance(&fa, &fb)
}
