//! Safeguard modulation onto pilots, packet-rate adaptation and the
//! shared-seed regeneration handshake.

use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::csi::{BasePilot, PilotSchedule};
use crate::error::{Error, Result};
use crate::safeguard::{sample_signal, SafeguardModel, SafeguardSignal};

pub const MIN_RATE: f64 = 50.0;
pub const MAX_RATE: f64 = 1000.0;

/// `X'_w[n] = s(w) * X[n]` for the first `packets` samples of `safeguard`.
pub fn modulate(base: &BasePilot, safeguard: &SafeguardSignal, packets: usize) -> Result<PilotSchedule> {
    if safeguard.len() < packets {
        return Err(Error::InvalidArgument(format!(
            "safeguard has {} samples but {packets} packets need pilots; resample first",
            safeguard.len()
        )));
    }
    let s = &safeguard.samples[..packets];
    if let Some(w) = s.iter().position(|v| *v == 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("safeguard sample {w} is zero or non-finite")));
    }
    let mut values = Vec::with_capacity(base.len() * packets);
    for &x in &base.values {
        values.extend(s.iter().map(|&sw| Complex64::new(sw * x, 0.0)));
    }
    Ok(PilotSchedule {
        subcarriers: base.len(),
        packets,
        values,
    })
}

/// Linear interpolation onto a `new_rate` packet grid covering the same duration.
pub fn resample_signal(signal: &SafeguardSignal, new_rate: f64) -> Result<SafeguardSignal> {
    if !(MIN_RATE..=MAX_RATE).contains(&new_rate) {
        return Err(Error::InvalidArgument(format!(
            "packet rate {new_rate} outside [{MIN_RATE}, {MAX_RATE}]"
        )));
    }
    if signal.is_empty() || !(signal.sample_rate > 0.0) {
        return Err(Error::InvalidArgument("cannot resample an empty signal".into()));
    }
    if new_rate == signal.sample_rate {
        return Ok(signal.clone());
    }
    let len = ((signal.len() as f64) * new_rate / signal.sample_rate).round().max(1.0) as usize;
    let last = signal.len() - 1;
    let samples = (0..len)
        .map(|k| {
            let pos = k as f64 * signal.sample_rate / new_rate;
            let i = (pos.floor() as usize).min(last);
            let frac = pos - i as f64;
            if i == last || frac == 0.0 {
                signal.samples[i]
            } else {
                signal.samples[i] * (1.0 - frac) + signal.samples[i + 1] * frac
            }
        })
        .collect();
    Ok(SafeguardSignal {
        samples,
        sample_rate: new_rate,
        condition: signal.condition.clone(),
        seed: signal.seed,
    })
}

/// What a transmitter shares with an authorized receiver so both can draw
/// the same safeguard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedHandshake {
    /// Hex SHA-256 of the safeguard checkpoint.
    pub checkpoint: String,
    /// Hex identifier of the noise schedule.
    pub schedule: String,
    pub condition: Vec<f64>,
    pub seed: u64,
    /// Packet rate the safeguard is resampled to, if not the model's own.
    #[serde(default)]
    pub packet_rate: Option<f64>,
}

impl SeedHandshake {
    pub fn new(model: &SafeguardModel, condition: Vec<f64>, seed: u64) -> Self {
        SeedHandshake {
            checkpoint: model.checkpoint_id(),
            schedule: model.schedule.id(),
            condition,
            seed,
            packet_rate: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Regenerate the transmitter's safeguard from a local checkpoint, refusing
/// if the checkpoint or schedule differs from the handshake.
pub fn regenerate_authorized(handshake: &SeedHandshake, model: &SafeguardModel) -> Result<SafeguardSignal> {
    let local = model.checkpoint_id();
    if local != handshake.checkpoint {
        return Err(Error::Handshake(format!(
            "checkpoint hash {local} does not match {}",
            handshake.checkpoint
        )));
    }
    let schedule = model.schedule.id();
    if schedule != handshake.schedule {
        return Err(Error::Handshake(format!(
            "schedule {schedule} does not match {}",
            handshake.schedule
        )));
    }
    let signal = sample_signal(model, &handshake.condition, handshake.seed)?;
    match handshake.packet_rate {
        Some(rate) if rate != signal.sample_rate => resample_signal(&signal, rate),
        _ => Ok(signal),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_safeguard_leaves_pilots() {
        let base = BasePilot::new(vec![1.0, -1.0, 1.0]).unwrap();
        let p = modulate(&base, &SafeguardSignal::constant(1.0, 4, 100.0), 4).unwrap();
        assert_eq!(p, base.schedule(4));
    }

    #[test]
    fn half_gain_pilot() {
        let p = modulate(&BasePilot::ones(1), &SafeguardSignal::constant(0.5, 2, 100.0), 2).unwrap();
        assert_eq!(p.at(0, 1), Complex64::new(0.5, 0.0));
    }

    #[test]
    fn zero_sample_and_short_signal_rejected() {
        let base = BasePilot::ones(2);
        let mut s = SafeguardSignal::constant(1.0, 4, 100.0);
        assert!(modulate(&base, &s, 5).is_err());
        s.samples[2] = 0.0;
        assert!(modulate(&base, &s, 4).is_err());
    }

    #[test]
    fn resample_rate_bounds() {
        let s = SafeguardSignal::constant(1.0, 16, 100.0);
        assert!(resample_signal(&s, 49.0).is_err());
        assert!(resample_signal(&s, 1001.0).is_err());
        assert_eq!(resample_signal(&s, 100.0).unwrap(), s);
        let up = resample_signal(&s, 400.0).unwrap();
        assert_eq!(up.len(), 64);
        assert!((up.duration() - s.duration()).abs() < 1e-12);
    }
}
