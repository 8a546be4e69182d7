//! Conditional signal denoiser, its training loop and the reverse sampler.
//!
//! The network predicts the injected noise `eps`; the score estimate is
//! `mu = -eps_hat / sqrt(1 - abar_t)`. Minimizing `|eps_hat - eps|^2` is the
//! same objective as `(1 - abar_t) |mu - grad log q(x_t | x_0)|^2`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::SafeguardDataset;
use super::schedule::{diffuse_with, standard_normal_vec, NoiseSchedule};
use super::{SafeguardSignal, S_MAX, S_MIN};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::nn::layers::{silu, silu_backward, sinusoidal_embedding, Film, FilmTrace, Linear};
use crate::nn::{AdamConfig, AdamState, Grads, NetworkParams, Tensor};
use crate::rng::{self, streams};

const TIME_DIM: usize = 32;

/// `Linear(W, H) -> FiLM -> SiLU -> Linear(H, H) -> FiLM -> SiLU -> Linear(H, W)`
/// with FiLM driven by `SiLU(Linear([cond; temb(t)]))`.
#[derive(Debug, Clone)]
pub struct SignalDenoiser {
    pub window: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    embed: Linear,
    l1: Linear,
    f1: Film,
    l2: Linear,
    f2: Film,
    l3: Linear,
}

pub struct DenoiserTrace {
    c_in: Tensor,
    c_pre: Tensor,
    c: Vec<f64>,
    x: Tensor,
    z1: Tensor,
    f1: FilmTrace,
    m1: Tensor,
    h1: Tensor,
    z2: Tensor,
    f2: FilmTrace,
    m2: Tensor,
    h2: Tensor,
}

impl SignalDenoiser {
    pub fn new(
        params: &mut NetworkParams,
        window: usize,
        cond_dim: usize,
        hidden: usize,
        embed_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(SignalDenoiser {
            window,
            cond_dim,
            hidden,
            embed_dim,
            embed: Linear::new(params, "sg.embed", cond_dim + TIME_DIM, embed_dim, rng)?,
            l1: Linear::new(params, "sg.l1", window, hidden, rng)?,
            f1: Film::new(params, "sg.f1", embed_dim, hidden, rng)?,
            l2: Linear::new(params, "sg.l2", hidden, hidden, rng)?,
            f2: Film::new(params, "sg.f2", embed_dim, hidden, rng)?,
            l3: Linear::zeroed(params, "sg.l3", hidden, window, rng)?,
        })
    }

    /// Predicted noise for one window `x` at timestep `t`.
    pub fn forward(&self, p: &NetworkParams, x: &[f64], cond: &[f64], t: usize) -> Result<(Vec<f64>, DenoiserTrace)> {
        if cond.len() != self.cond_dim {
            return Err(Error::Shape {
                block: "sg.embed".into(),
                expected: vec![self.cond_dim],
                actual: vec![cond.len()],
            });
        }
        let mut c_in = cond.to_vec();
        c_in.extend(sinusoidal_embedding(t as f64, TIME_DIM));
        let c_in = Tensor::new(vec![1, c_in.len()], c_in)?;
        let c_pre = self.embed.forward(p, &c_in)?;
        let c = silu(&c_pre).into_data();
        let x = Tensor::new(vec![1, x.len()], x.to_vec())?;
        let z1 = self.l1.forward(p, &x)?;
        let (m1, f1) = self.f1.forward(p, &z1, &c)?;
        let h1 = silu(&m1);
        let z2 = self.l2.forward(p, &h1)?;
        let (m2, f2) = self.f2.forward(p, &z2, &c)?;
        let h2 = silu(&m2);
        let y = self.l3.forward(p, &h2)?.into_data();
        Ok((
            y,
            DenoiserTrace {
                c_in,
                c_pre,
                c,
                x,
                z1,
                f1,
                m1,
                h1,
                z2,
                f2,
                m2,
                h2,
            },
        ))
    }

    pub fn backward(&self, p: &NetworkParams, tr: &DenoiserTrace, gy: &[f64], grads: &mut Grads) {
        let gy = Tensor::new(vec![1, gy.len()], gy.to_vec()).expect("denoiser grad shape");
        let g = self.l3.backward(p, &tr.h2, &gy, grads);
        let g = silu_backward(&tr.m2, &g);
        let (g, gc2) = self.f2.backward_with_cond(p, &tr.z2, &tr.f2, &g, grads);
        let g = self.l2.backward(p, &tr.h1, &g, grads);
        let g = silu_backward(&tr.m1, &g);
        let (g, gc1) = self.f1.backward_with_cond(p, &tr.z1, &tr.f1, &g, grads);
        self.l1.backward(p, &tr.x, &g, grads);
        let gc: Vec<f64> = gc1.iter().zip(&gc2).map(|(a, b)| a + b).collect();
        debug_assert_eq!(gc.len(), tr.c.len());
        let gc = silu_backward(&tr.c_pre, &Tensor::new(vec![1, gc.len()], gc).expect("cond grad shape"));
        self.embed.backward(p, &tr.c_in, &gc, grads);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub steps: usize,
    pub beta_1: f64,
    pub beta_t: f64,
    /// Where to write the last finite parameters if training diverges.
    #[serde(default)]
    pub abort_checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 64,
            lr: 1e-3,
            hidden: 256,
            embed_dim: 64,
            steps: 500,
            beta_1: 1e-4,
            beta_t: 0.04,
            abort_checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_1, self.beta_t)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-element noise-regression loss for each epoch.
    pub loss_curve: Vec<f64>,
}

/// Trained denoiser with everything needed to sample from it.
#[derive(Debug, Clone)]
pub struct SafeguardModel {
    pub params: NetworkParams,
    pub net: SignalDenoiser,
    pub schedule: NoiseSchedule,
    pub mean: f64,
    pub std: f64,
    pub sample_rate: f64,
    pub trained: bool,
}

fn meta_f64(p: &NetworkParams, key: &str) -> Result<f64> {
    p.meta_value(key)
        .ok_or_else(|| Error::Format(format!("checkpoint lacks `{key}`")))?
        .parse()
        .map_err(|_| Error::Format(format!("checkpoint field `{key}` is not a number")))
}

impl SafeguardModel {
    pub fn new(
        window: usize,
        cond_dim: usize,
        sample_rate: f64,
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut params = NetworkParams::new(seed);
        let mut r = rng::stream(seed, streams::SAFEGUARD_INIT);
        let net = SignalDenoiser::new(&mut params, window, cond_dim, cfg.hidden, cfg.embed_dim, &mut r)?;
        let mut m = SafeguardModel {
            params,
            net,
            schedule: cfg.schedule()?,
            mean: 0.0,
            std: 1.0,
            sample_rate,
            trained: false,
        };
        m.write_meta(cfg);
        Ok(m)
    }

    fn write_meta(&mut self, cfg: &TrainConfig) {
        let p = &mut self.params;
        p.set_meta("model", "safeguard");
        p.set_meta("window", self.net.window.to_string());
        p.set_meta("cond_dim", self.net.cond_dim.to_string());
        p.set_meta("hidden", self.net.hidden.to_string());
        p.set_meta("embed_dim", self.net.embed_dim.to_string());
        p.set_meta("steps", cfg.steps.to_string());
        p.set_meta("beta_1", cfg.beta_1.to_string());
        p.set_meta("beta_t", cfg.beta_t.to_string());
        p.set_meta("mean", self.mean.to_string());
        p.set_meta("std", self.std.to_string());
        p.set_meta("sample_rate", self.sample_rate.to_string());
        p.set_meta("trained", self.trained.to_string());
    }

    fn sync_meta(&mut self) {
        self.params.set_meta("mean", self.mean.to_string());
        self.params.set_meta("std", self.std.to_string());
        self.params.set_meta("trained", self.trained.to_string());
    }

    /// Content hash of the checkpoint (weights and metadata).
    pub fn checkpoint_id(&self) -> String {
        self.params.content_hash()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.params.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_params(NetworkParams::load(path)?)
    }

    pub fn from_params(stored: NetworkParams) -> Result<Self> {
        if stored.meta_value("model") != Some("safeguard") {
            return Err(Error::Format("checkpoint is not a safeguard model".into()));
        }
        let cfg = TrainConfig {
            hidden: meta_f64(&stored, "hidden")? as usize,
            embed_dim: meta_f64(&stored, "embed_dim")? as usize,
            steps: meta_f64(&stored, "steps")? as usize,
            beta_1: meta_f64(&stored, "beta_1")?,
            beta_t: meta_f64(&stored, "beta_t")?,
            ..TrainConfig::default()
        };
        let mut m = SafeguardModel::new(
            meta_f64(&stored, "window")? as usize,
            meta_f64(&stored, "cond_dim")? as usize,
            meta_f64(&stored, "sample_rate")?,
            &cfg,
            stored.seed(),
        )?;
        m.params.check_compatible(&stored)?;
        m.mean = meta_f64(&stored, "mean")?;
        m.std = meta_f64(&stored, "std")?;
        m.trained = stored.meta_value("trained") == Some("true");
        m.params = stored;
        Ok(m)
    }

    /// Noise estimate `sqrt(1 - abar_t) x_t + net(x_t, c, t)`. The skip term is
    /// the exact estimate for unit-variance Gaussian data, so the network
    /// learns the residual.
    pub fn predict_noise(&self, x: &[f64], cond: &[f64], t: usize) -> Result<(Vec<f64>, DenoiserTrace)> {
        let (mut eps, trace) = self.net.forward(&self.params, x, cond, t)?;
        let skip = (1.0 - self.schedule.alpha_bar(t)).sqrt();
        for (e, xi) in eps.iter_mut().zip(x) {
            *e += skip * xi;
        }
        Ok((eps, trace))
    }

    /// Score estimate `-eps_hat / sqrt(1 - abar_t)` in standardized units.
    pub fn score(&self, x: &[f64], cond: &[f64], t: usize) -> Result<Vec<f64>> {
        let (eps, _) = self.predict_noise(x, cond, t)?;
        let sd = (1.0 - self.schedule.alpha_bar(t)).sqrt();
        Ok(eps.into_iter().map(|e| -e / sd).collect())
    }
}

struct ItemResult {
    loss: f64,
    grads: Grads,
}

fn item_step(model: &SafeguardModel, x0: &[f64], cond: &[f64], item_seed: u64) -> Result<ItemResult> {
    let mut r = rng::stream(item_seed, streams::SAFEGUARD_TRAIN);
    let t = r.random_range(1..=model.schedule.steps());
    let eps = standard_normal_vec(x0.len(), &mut r);
    let xt = diffuse_with(x0, &model.schedule, t, &eps);
    let (pred, trace) = model.predict_noise(&xt, cond, t)?;
    let w = x0.len() as f64;
    let diff: Vec<f64> = pred.iter().zip(&eps).map(|(p, e)| p - e).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / w;
    let gy: Vec<f64> = diff.iter().map(|d| 2.0 * d / w).collect();
    let mut grads = Grads::zeros_like(&model.params);
    model.net.backward(&model.params, &trace, &gy, &mut grads);
    Ok(ItemResult { loss, grads })
}

/// Fit the denoiser. Signals are standardized by the dataset's global mean
/// and standard deviation; per-item randomness derives from
/// `(seed, epoch, position)` so results do not depend on the execution mode.
pub fn train_denoiser(
    dataset: &SafeguardDataset,
    cfg: &TrainConfig,
    seed: u64,
    mode: ExecMode,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(SafeguardModel, TrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut model = SafeguardModel::new(dataset.window, dataset.condition_dim(), dataset.sample_rate, cfg, seed)?;
    let (mean, std) = dataset.moments();
    model.mean = mean;
    model.std = if std > 1e-9 * mean.abs().max(1.0) { std } else { 1.0 };
    let z: Vec<Vec<f64>> = dataset
        .signals
        .iter()
        .map(|s| s.iter().map(|v| (v - model.mean) / model.std).collect())
        .collect();

    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(cfg.lr));
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle = rng::stream(rng::derive_seed(seed, epoch as u64), streams::SAFEGUARD_TRAIN);
        order.shuffle(&mut shuffle);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let base = rng::derive_seed(rng::derive_seed(seed, epoch as u64), b as u64);
            let results = map_indexed(mode, batch.len(), |k| {
                let i = batch[k];
                item_step(&model, &z[i], &dataset.conditions[i], rng::derive_seed(base, k as u64))
            });
            let results = results.into_iter().collect::<Result<Vec<_>>>()?;
            let loss: f64 = results.iter().map(|r| r.loss).sum::<f64>();
            let parts: Vec<Grads> = results.into_iter().map(|r| r.grads).collect();
            let mut grads = Grads::sum_ordered(&model.params, &parts);
            grads.scale(1.0 / batch.len() as f64);
            if !loss.is_finite() || !grads.is_finite() {
                if let Some(path) = &cfg.abort_checkpoint {
                    model.sync_meta();
                    model.save(path)?;
                }
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite loss or gradient".into(),
                });
            }
            adam.update(&mut model.params, &grads)?;
            epoch_loss += loss;
        }
        let mean_loss = epoch_loss / dataset.len() as f64;
        report.loss_curve.push(mean_loss);
        on_epoch(epoch, mean_loss);
    }
    model.trained = true;
    model.sync_meta();
    Ok((model, report))
}

/// Reverse-chain sample in standardized units. Strictly sequential.
pub fn sample_standardized(model: &SafeguardModel, condition: &[f64], seed: u64) -> Result<Vec<f64>> {
    if !model.trained {
        return Err(Error::Untrained("safeguard denoiser has no trained weights".into()));
    }
    let mut r = rng::stream(seed, streams::SAFEGUARD_SAMPLE);
    let mut x = standard_normal_vec(model.net.window, &mut r);
    for t in (1..=model.schedule.steps()).rev() {
        let mu = model.score(&x, condition, t)?;
        let b = model.schedule.beta(t);
        let keep = (1.0 - b).sqrt();
        let noise = b.sqrt();
        let v = standard_normal_vec(x.len(), &mut r);
        for ((xi, mi), vi) in x.iter_mut().zip(&mu).zip(&v) {
            *xi = (*xi + b * mi) / keep + noise * vi;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sampled safeguard".into()));
    }
    Ok(x)
}

/// Generate a safeguard for `condition`; `(seed, condition, checkpoint)`
/// determine every output bit.
pub fn sample_signal(model: &SafeguardModel, condition: &[f64], seed: u64) -> Result<SafeguardSignal> {
    let z = sample_standardized(model, condition, seed)?;
    let samples = z
        .into_iter()
        .map(|v| (v * model.std + model.mean).clamp(S_MIN, S_MAX))
        .collect();
    Ok(SafeguardSignal {
        samples,
        sample_rate: model.sample_rate,
        condition: condition.to_vec(),
        seed,
    })
}
