//! Synthetic composite-signal dataset built from simulated channels.
//!
//! Each record pairs a condition with `s(w) = sum_k 1 / |H_k(w)|` over four
//! noiseless activity traces on the conditioned link at one subcarrier,
//! clipped to the safeguard range `[S_MIN, S_MAX]`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SignalCondition, S_MAX, S_MIN};
use crate::channel::{synth_csi, ActivityKind, ChannelParams, Layout};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub count: usize,
    pub devices: usize,
    pub arena: f64,
    /// Subcarrier whose magnitude forms the composite; defaults to `N / 2`.
    pub reference_subcarrier: Option<usize>,
    /// Magnitudes below `floor_ratio * median |H|` are clipped before inversion.
    pub floor_ratio: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 2000,
            devices: 5,
            arena: 4.0,
            reference_subcarrier: None,
            floor_ratio: 1e-3,
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 0 {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

/// Sum of reciprocal magnitudes, each trace clipped at `floor_ratio` times
/// its own median.
pub fn composite_signal(magnitudes: &[Vec<f64>], floor_ratio: f64) -> Result<Vec<f64>> {
    let len = magnitudes.first().map_or(0, Vec::len);
    if len == 0 || magnitudes.iter().any(|m| m.len() != len) {
        return Err(Error::InvalidArgument("magnitude traces must be non-empty and equally long".into()));
    }
    let mut out = vec![0.0; len];
    for mags in magnitudes {
        let floor = floor_ratio * median(mags);
        if !(floor > 0.0) || mags.iter().any(|m| !m.is_finite()) {
            return Err(Error::Degenerate("channel magnitude vanishes".into()));
        }
        for (o, &m) in out.iter_mut().zip(mags) {
            *o += 1.0 / m.max(floor);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub channel: ChannelParams,
    pub config: DatasetConfig,
    /// Simulation seed of every kept record.
    pub record_seeds: Vec<u64>,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeguardDataset {
    pub window: usize,
    pub sample_rate: f64,
    pub conditions: Vec<Vec<f64>>,
    pub signals: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

fn random_links(n: usize, extra: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut links: Vec<(usize, usize)> = Vec::new();
    let mut guard = 0;
    while links.len() < extra + 1 && guard < 1000 {
        guard += 1;
        let tx = rng.random_range(0..n);
        let rx = rng.random_range(0..n);
        if tx != rx && !links.contains(&(tx, rx)) {
            links.push((tx, rx));
        }
    }
    links
}

/// Composite safeguard of link `tx -> rx`: the clipped reciprocal magnitudes
/// of the reference subcarrier under every composite activity.
pub fn composite_for_link(
    layout: &Layout,
    (tx, rx): (usize, usize),
    params: &ChannelParams,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let sc = cfg.reference_subcarrier.unwrap_or(params.subcarriers / 2);
    if sc >= params.subcarriers {
        return Err(Error::InvalidArgument(format!("reference subcarrier {sc} out of range")));
    }
    let single = ChannelParams {
        subcarriers: 1,
        carrier_hz: params.subcarrier_freq(sc),
        bandwidth_hz: 0.0,
        ..params.clone().noiseless()
    };
    let mags = ActivityKind::COMPOSITE
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let t = synth_csi(layout, tx, rx, kind, &single, rng::derive_seed(seed, k as u64))?;
            Ok(t.h.iter().map(|h| h.norm()).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(composite_signal(&mags, cfg.floor_ratio)?
        .into_iter()
        .map(|v| v.clamp(S_MIN, S_MAX))
        .collect())
}

fn build_record(
    index: usize,
    layouts: &[Layout],
    params: &ChannelParams,
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, u64)> {
    let record_seed = rng::derive_seed(seed, index as u64);
    let mut r = rng::stream(record_seed, streams::DATASET);
    let layout = if layouts.is_empty() {
        Layout::random(cfg.devices, cfg.arena, &mut r)
    } else {
        layouts[index % layouts.len()].clone()
    };
    let extra = r.random_range(0..SignalCondition::MAX_LINKS);
    let links = random_links(layout.len(), extra, &mut r);
    let (tx, rx) = links[0];
    let signal = composite_for_link(&layout, (tx, rx), params, cfg, record_seed)?;
    let cond = SignalCondition::from_plan(&layout, links[0], &links[1..], cfg.arena)?.encode();
    Ok((cond, signal, record_seed))
}

/// Simulate `cfg.count` records. With no layouts, each record draws its own
/// random layout. Records that fail on degenerate geometry are skipped.
pub fn build_dataset(
    layouts: &[Layout],
    params: &ChannelParams,
    cfg: &DatasetConfig,
    seed: u64,
    mode: ExecMode,
) -> Result<SafeguardDataset> {
    if cfg.count == 0 {
        return Err(Error::InvalidArgument("dataset count must be at least 1".into()));
    }
    let results = map_indexed(mode, cfg.count, |i| build_record(i, layouts, params, cfg, seed));
    let mut ds = SafeguardDataset {
        window: params.packets,
        sample_rate: params.packet_rate,
        conditions: Vec::with_capacity(cfg.count),
        signals: Vec::with_capacity(cfg.count),
        provenance: Provenance {
            seed,
            channel: params.clone(),
            config: cfg.clone(),
            record_seeds: Vec::with_capacity(cfg.count),
            skipped: 0,
        },
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((c, s, rs)) => {
                ds.conditions.push(c);
                ds.signals.push(s);
                ds.provenance.record_seeds.push(rs);
            }
            Err(e @ (Error::Degenerate(_) | Error::InvalidLayout(_))) => {
                log::warn!("dataset record {i} skipped: {e}");
                ds.provenance.skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if ds.signals.is_empty() {
        return Err(Error::Degenerate("every dataset record was skipped".into()));
    }
    Ok(ds)
}

const DATASET_MAGIC: &[u8; 8] = b"DFSSDSET";

impl SafeguardDataset {
    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn condition_dim(&self) -> usize {
        self.conditions.first().map_or(SignalCondition::DIM, Vec::len)
    }

    /// Global scalar mean and standard deviation over all samples.
    pub fn moments(&self) -> (f64, f64) {
        let n = (self.len() * self.window) as f64;
        let mean = self.signals.iter().flatten().sum::<f64>() / n;
        let var = self.signals.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// ```text
    /// magic        8 bytes "DFSSDSET"
    /// version      u32     condition encoding version
    /// window       u32
    /// sample_rate  f64
    /// cond_dim     u32
    /// count        u64
    /// prov_len     u32, then prov_len bytes of JSON provenance
    /// records      count x (cond_dim f64 condition, window f64 signal)
    /// ```
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let prov = serde_json::to_vec(&self.provenance)?;
        let cd = self.condition_dim();
        let mut out = Vec::with_capacity(40 + prov.len() + self.len() * (cd + self.window) * 8);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&SignalCondition::VERSION.to_le_bytes());
        out.extend_from_slice(&(self.window as u32).to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(cd as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(prov.len() as u32).to_le_bytes());
        out.extend_from_slice(&prov);
        for (c, s) in self.conditions.iter().zip(&self.signals) {
            for v in c.iter().chain(s) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("dataset: {m}"));
        if b.len() < 40 || &b[..8] != DATASET_MAGIC {
            return Err(bad("missing magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != SignalCondition::VERSION {
            return Err(bad(&format!("unsupported condition encoding version {version}")));
        }
        let window = u32_at(12) as usize;
        let sample_rate = f64::from_le_bytes(b[16..24].try_into().unwrap());
        let cd = u32_at(24) as usize;
        let count = u64::from_le_bytes(b[28..36].try_into().unwrap()) as usize;
        let plen = u32_at(36) as usize;
        let body = 40 + plen;
        if b.len() != body + count * (cd + window) * 8 {
            return Err(bad("length does not match header"));
        }
        let provenance: Provenance = serde_json::from_slice(&b[40..body])?;
        let mut vals = b[body..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut conditions = Vec::with_capacity(count);
        let mut signals = Vec::with_capacity(count);
        for _ in 0..count {
            conditions.push(vals.by_ref().take(cd).collect());
            signals.push(vals.by_ref().take(window).collect());
        }
        Ok(SafeguardDataset {
            window,
            sample_rate,
            conditions,
            signals,
            provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reciprocal_sum_examples() {
        let ones = vec![1.0; 8];
        let s = composite_signal(&[ones.clone(), ones.clone(), ones.clone(), ones.clone()], 1e-3).unwrap();
        assert!(s.iter().all(|v| *v == 4.0));
        let s = composite_signal(&[vec![2.0; 8], ones.clone(), ones.clone(), ones], 1e-3).unwrap();
        assert!(s.iter().all(|v| *v == 3.5));
    }

    #[test]
    fn deep_fade_is_clipped() {
        let mut m = vec![1.0; 9];
        m[4] = 1e-9;
        let s = composite_signal(&[m], 1e-3).unwrap();
        assert_eq!(s[4], 1e3);
    }

    #[test]
    fn zero_channel_is_degenerate() {
        assert!(matches!(composite_signal(&[vec![0.0; 4]], 1e-3), Err(Error::Degenerate(_))));
    }
}
