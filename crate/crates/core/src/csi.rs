//! Pilot-based least-squares channel estimation.
//!
//! Every packet carries a pilot on all subcarriers (block-type arrangement).
//! A receiver that knows the transmitted pilots exactly recovers `H`; one
//! that assumes the unmodulated base pilot sees `s(w) * H`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{CsiKind, CsiMatrix};
use crate::error::{Error, Result};
use crate::safeguard::SafeguardSignal;

/// Base BPSK pilot, one `+1` or `-1` value per subcarrier, reused every packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasePilot {
    pub values: Vec<f64>,
}

impl BasePilot {
    pub fn ones(subcarriers: usize) -> Self {
        BasePilot {
            values: vec![1.0; subcarriers],
        }
    }

    pub fn random(subcarriers: usize, rng: &mut impl Rng) -> Self {
        BasePilot {
            values: (0..subcarriers)
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                .collect(),
        }
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| v.abs() != 1.0) {
            return Err(Error::InvalidArgument("base pilot entries must be +1 or -1".into()));
        }
        Ok(BasePilot { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The same pilot on every packet.
    pub fn schedule(&self, packets: usize) -> PilotSchedule {
        PilotSchedule {
            subcarriers: self.len(),
            packets,
            values: self
                .values
                .iter()
                .flat_map(|&v| std::iter::repeat_n(Complex64::new(v, 0.0), packets))
                .collect(),
        }
    }
}

/// Diagonal pilot matrices for a run of packets, stored `[n * packets + w]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotSchedule {
    pub subcarriers: usize,
    pub packets: usize,
    pub values: Vec<Complex64>,
}

impl PilotSchedule {
    pub fn at(&self, n: usize, w: usize) -> Complex64 {
        self.values[n * self.packets + w]
    }

    fn check_invertible(&self) -> Result<()> {
        match self.values.iter().position(|v| v.norm_sqr() == 0.0) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "pilot entry at subcarrier {} packet {} is zero",
                i / self.packets,
                i % self.packets
            ))),
            None => Ok(()),
        }
    }

    fn check_dims(&self, m: &CsiMatrix) -> Result<()> {
        if self.subcarriers != m.subcarriers || self.packets != m.packets {
            return Err(Error::Shape {
                block: "pilot schedule".into(),
                expected: vec![m.subcarriers, m.packets],
                actual: vec![self.subcarriers, self.packets],
            });
        }
        Ok(())
    }
}

fn div(y: Complex64, x: Complex64) -> Complex64 {
    if x.im == 0.0 {
        Complex64::new(y.re / x.re, y.im / x.re)
    } else {
        y / x
    }
}

fn mul(x: Complex64, h: Complex64) -> Complex64 {
    if x.im == 0.0 {
        Complex64::new(x.re * h.re, x.re * h.im)
    } else {
        x * h
    }
}

/// `Y[n, w] = X[n, w] * H[n, w]`.
pub fn received_symbols(pilot: &PilotSchedule, channel: &CsiMatrix) -> Result<CsiMatrix> {
    pilot.check_dims(channel)?;
    let y = pilot.values.iter().zip(&channel.h).map(|(&x, &h)| mul(x, h)).collect();
    Ok(channel.with_data(CsiKind::Received, y))
}

/// `H_hat[n, w] = Y[n, w] / X[n, w]`.
pub fn ls_estimate(pilot: &PilotSchedule, received: &CsiMatrix) -> Result<CsiMatrix> {
    pilot.check_dims(received)?;
    pilot.check_invertible()?;
    let h = pilot.values.iter().zip(&received.h).map(|(&x, &y)| div(y, x)).collect();
    Ok(received.with_data(CsiKind::Channel, h))
}

/// Least-squares cost `sum |Y - X H_hat|^2`.
pub fn ls_cost(pilot: &PilotSchedule, received: &CsiMatrix, estimate: &[Complex64]) -> f64 {
    pilot
        .values
        .iter()
        .zip(&received.h)
        .zip(estimate)
        .map(|((&x, &y), &h)| (y - x * h).norm_sqr())
        .sum()
}

/// Estimate as seen by a receiver that only knows the base pilot.
pub fn extract_unauthorized(received: &CsiMatrix, base: &BasePilot) -> Result<CsiMatrix> {
    let mut est = ls_estimate(&base.schedule(received.packets), received)?;
    est.kind = CsiKind::Unauthorized;
    Ok(est)
}

/// Estimate by a receiver that regenerated the transmitter's safeguard.
pub fn extract_authorized(received: &CsiMatrix, base: &BasePilot, safeguard: &SafeguardSignal) -> Result<CsiMatrix> {
    let pilot = crate::modulator::modulate(base, safeguard, received.packets)?;
    let mut est = ls_estimate(&pilot, received)?;
    est.kind = CsiKind::Authorized;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(h: Vec<Complex64>, subcarriers: usize, packets: usize) -> CsiMatrix {
        CsiMatrix {
            kind: CsiKind::Channel,
            subcarriers,
            packets,
            carrier_hz: 2.8e9,
            bandwidth_hz: 1e8,
            packet_rate: 100.0,
            seed: 0,
            h,
        }
    }

    #[test]
    fn unit_and_negative_pilots() {
        let h: Vec<Complex64> = (0..6).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let m = matrix(h.clone(), 2, 3);
        assert_eq!(received_symbols(&BasePilot::ones(2).schedule(3), &m).unwrap().h, h);
        let neg = BasePilot::new(vec![-1.0, -1.0]).unwrap().schedule(3);
        let y = received_symbols(&neg, &m).unwrap();
        assert!(y.h.iter().zip(&h).all(|(a, b)| *a == -*b));
    }

    #[test]
    fn identity_pilot_estimate_is_received() {
        let y: Vec<Complex64> = (0..4).map(|i| Complex64::new(0.5 * i as f64, 2.0)).collect();
        let r = matrix(y.clone(), 2, 2);
        assert_eq!(ls_estimate(&BasePilot::ones(2).schedule(2), &r).unwrap().h, y);
    }

    #[test]
    fn zero_pilot_rejected() {
        let mut p = BasePilot::ones(2).schedule(2);
        p.values[3] = Complex64::new(0.0, 0.0);
        assert!(ls_estimate(&p, &matrix(vec![Complex64::new(1.0, 0.0); 4], 2, 2)).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = BasePilot::ones(3).schedule(2);
        assert!(received_symbols(&p, &matrix(vec![Complex64::new(1.0, 0.0); 4], 2, 2)).is_err());
    }

    #[test]
    fn base_pilot_values_checked() {
        assert!(BasePilot::new(vec![1.0, 0.5]).is_err());
        assert!(BasePilot::new(vec![]).is_err());
    }
}
