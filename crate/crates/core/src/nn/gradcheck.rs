use rand::Rng;

use super::params::{Grads, NetworkParams};
use crate::error::{Error, Result};
use crate::rng;

pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Block name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

/// Relative error used for every comparison.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare analytic gradients against central differences with step
/// [`FD_STEP`] on `coords` randomly chosen coordinates, plus at least one
/// coordinate from every parameter block.
///
/// `loss` must return the scalar loss and its analytic gradient.
pub fn gradcheck<F>(params: &NetworkParams, loss: F, coords: usize, seed: u64) -> Result<GradcheckReport>
where
    F: Fn(&NetworkParams) -> Result<(f64, Grads)>,
{
    let (l0, analytic) = loss(params)?;
    if !l0.is_finite() {
        return Err(Error::NonFinite(format!("loss {l0}")));
    }
    let mut r = rng::stream(seed, 0x6C);
    let mut picks: Vec<(usize, usize)> = params
        .blocks()
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.value.is_empty())
        .map(|(k, b)| (k, r.random_range(0..b.value.len())))
        .collect();
    let total = params.num_params();
    for _ in 0..coords {
        let mut flat = r.random_range(0..total);
        for (k, b) in params.blocks().iter().enumerate() {
            if flat < b.value.len() {
                picks.push((k, flat));
                break;
            }
            flat -= b.value.len();
        }
    }

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };
    let mut probe = params.clone();
    for (k, i) in picks {
        let orig = params.blocks()[k].value.data()[i];
        probe.blocks_mut()[k].value.data_mut()[i] = orig + FD_STEP;
        let (lp, _) = loss(&probe)?;
        probe.blocks_mut()[k].value.data_mut()[i] = orig - FD_STEP;
        let (lm, _) = loss(&probe)?;
        probe.blocks_mut()[k].value.data_mut()[i] = orig;
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::NonFinite("loss during finite differences".into()));
        }
        let numeric = (lp - lm) / (2.0 * FD_STEP);
        let err = relative_error(analytic.blocks()[k].data()[i], numeric);
        report.coords_checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err;
            report.worst = Some((params.blocks()[k].name.clone(), i));
        }
    }
    Ok(report)
}
