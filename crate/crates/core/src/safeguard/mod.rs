//! Composite safeguarding signals: condition encoding, the training dataset,
//! the continuous diffusion schedule and the conditional denoiser.

pub mod dataset;
pub mod model;
pub mod schedule;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{Layout, Point};
use crate::error::{Error, Result};

pub use dataset::{build_dataset, composite_for_link, composite_signal, DatasetConfig, SafeguardDataset};
pub use model::{sample_signal, train_denoiser, SafeguardModel, SignalDenoiser, TrainConfig, TrainReport};
pub use schedule::{forward_diffuse, forward_step, score_target, NoiseSchedule};

pub const S_MIN: f64 = 0.05;
pub const S_MAX: f64 = 20.0;

/// A positive gain sequence applied to every pilot of a packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeguardSignal {
    pub samples: Vec<f64>,
    /// Packets per second.
    pub sample_rate: f64,
    pub condition: Vec<f64>,
    pub seed: u64,
}

impl SafeguardSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Self {
        SafeguardSignal {
            samples,
            sample_rate,
            condition: Vec::new(),
            seed: 0,
        }
    }

    pub fn constant(value: f64, len: usize, sample_rate: f64) -> Self {
        Self::new(vec![value; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Two-column CSV `w,s`, preceded by `#` metadata lines.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# sample_rate={}\n# seed={}\n# condition=", self.sample_rate, self.seed);
        out.push_str(&self.condition.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";"));
        out.push_str("\nw,s\n");
        for (w, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{w},{s}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut sig = SafeguardSignal::new(Vec::new(), 0.0);
        for line in text.lines() {
            let line = line.trim();
            if let Some(meta) = line.strip_prefix('#') {
                let (k, v) = meta.trim().split_once('=').unwrap_or(("", ""));
                let bad = |_| Error::Format(format!("bad signal metadata `{line}`"));
                match k {
                    "sample_rate" => sig.sample_rate = v.parse().map_err(bad)?,
                    "seed" => sig.seed = v.parse().map_err(|_| Error::Format(format!("bad seed `{v}`")))?,
                    "condition" if !v.is_empty() => {
                        sig.condition = v.split(';').map(|c| c.parse()).collect::<std::result::Result<_, _>>().map_err(bad)?
                    }
                    _ => {}
                }
            } else if line.is_empty() || line == "w,s" {
                continue;
            } else {
                let (_, s) = line
                    .split_once(',')
                    .ok_or_else(|| Error::Format(format!("bad signal row `{line}`")))?;
                sig.samples
                    .push(s.parse().map_err(|_| Error::Format(format!("bad sample `{s}`")))?);
            }
        }
        if !(sig.sample_rate > 0.0) || sig.samples.is_empty() {
            return Err(Error::Format("signal file lacks samples or sample rate".into()));
        }
        Ok(sig)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Generation condition: active links of the plan and the user position.
///
/// Encoding version 1, all coordinates divided by the arena size `A`:
///
/// ```text
/// [0..16)  4 link slots of (tx.x, tx.y, rx.x, rx.y), zero padded; slot 0 is the target link
/// [16..18) user (x, y)
/// [18]     link count / 4
/// [19..23) target link: d_D / A, d_tx,u / A, d_u,rx / A, d_tx,u * d_u,rx / A^2
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalCondition {
    pub links: Vec<(Point, Point)>,
    pub user: Point,
    pub arena: f64,
}

impl SignalCondition {
    pub const VERSION: u32 = 1;
    pub const MAX_LINKS: usize = 4;
    pub const DIM: usize = 23;

    pub fn new(links: Vec<(Point, Point)>, user: Point, arena: f64) -> Result<Self> {
        if links.is_empty() || links.len() > Self::MAX_LINKS {
            return Err(Error::InvalidArgument(format!(
                "condition needs 1..={} links, got {}",
                Self::MAX_LINKS,
                links.len()
            )));
        }
        if !(arena > 0.0) {
            return Err(Error::InvalidArgument("arena must be positive".into()));
        }
        Ok(SignalCondition { links, user, arena })
    }

    /// Condition for `target` plus up to three further links of a plan.
    pub fn from_plan(layout: &Layout, target: (usize, usize), others: &[(usize, usize)], arena: f64) -> Result<Self> {
        let pt = |(a, b): (usize, usize)| (layout.devices[a], layout.devices[b]);
        let mut links = vec![pt(target)];
        links.extend(
            others
                .iter()
                .filter(|&&l| l != target)
                .take(Self::MAX_LINKS - 1)
                .map(|&l| pt(l)),
        );
        Self::new(links, layout.user, arena)
    }

    pub fn encode(&self) -> Vec<f64> {
        let a = self.arena;
        let mut v = vec![0.0; Self::DIM];
        for (k, (tx, rx)) in self.links.iter().take(Self::MAX_LINKS).enumerate() {
            v[4 * k..4 * k + 4].copy_from_slice(&[tx.x / a, tx.y / a, rx.x / a, rx.y / a]);
        }
        v[16] = self.user.x / a;
        v[17] = self.user.y / a;
        v[18] = self.links.len() as f64 / Self::MAX_LINKS as f64;
        let (tx, rx) = self.links[0];
        let d_tx = tx.dist(self.user);
        let d_rx = self.user.dist(rx);
        v[19] = tx.dist(rx) / a;
        v[20] = d_tx / a;
        v[21] = d_rx / a;
        v[22] = d_tx * d_rx / (a * a);
        v
    }
}
