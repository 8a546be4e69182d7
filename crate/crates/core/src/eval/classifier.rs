//! Proxy activity recognizer: an MLP over standardized STFT features.

use serde::{Deserialize, Serialize};

use super::features::FeatureExtractor;
use crate::channel::ActivityKind;
use crate::error::{Error, Result};
use crate::nn::layers::{log_softmax, softmax_cross_entropy};
use crate::nn::{AdamConfig, AdamState, Grads, Mlp, NetworkParams, Tensor};
use crate::rng::{self, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 32,
            epochs: 400,
            lr: 3e-3,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActivityClassifier {
    pub classes: Vec<ActivityKind>,
    params: NetworkParams,
    mlp: Mlp,
    mean: Vec<f64>,
    std: Vec<f64>,
    trained: bool,
}

impl ActivityClassifier {
    pub fn new(classes: Vec<ActivityKind>, dim: usize, cfg: &ClassifierConfig, seed: u64) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        let mut params = NetworkParams::new(seed);
        let mut r = rng::stream(seed, streams::CLASSIFIER);
        let mlp = Mlp::new(&mut params, "clf", &[dim, cfg.hidden, cfg.hidden, classes.len()], &mut r)?;
        Ok(ActivityClassifier {
            classes,
            params,
            mlp,
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            trained: false,
        })
    }

    fn standardize(&self, rows: &[Vec<f64>]) -> Result<Tensor> {
        let dim = self.mean.len();
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::Shape {
                    block: "clf".into(),
                    expected: vec![dim],
                    actual: vec![r.len()],
                });
            }
            data.extend(r.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s));
        }
        Tensor::new(vec![rows.len(), dim], data)
    }

    /// Full-batch Adam on cross-entropy. Labels index into `classes`.
    pub fn train(
        classes: Vec<ActivityKind>,
        features: &[Vec<f64>],
        labels: &[usize],
        cfg: &ClassifierConfig,
        seed: u64,
    ) -> Result<Self> {
        if features.is_empty() || features.len() != labels.len() {
            return Err(Error::InvalidArgument("features and labels must be non-empty and aligned".into()));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes.len()) {
            return Err(Error::InvalidArgument(format!("label {l} out of range")));
        }
        let dim = features[0].len();
        let mut clf = Self::new(classes, dim, cfg, seed)?;
        let n = features.len() as f64;
        for j in 0..dim {
            let m = features.iter().map(|f| f[j]).sum::<f64>() / n;
            let v = features.iter().map(|f| (f[j] - m).powi(2)).sum::<f64>() / n;
            clf.mean[j] = m;
            clf.std[j] = if v > 1e-12 { v.sqrt() } else { 1.0 };
        }
        let x = clf.standardize(features)?;
        let weights = vec![1.0 / n; features.len()];
        let mut adam = AdamState::new(&clf.params, AdamConfig::with_lr(cfg.lr));
        for epoch in 0..cfg.epochs {
            let (logits, trace) = clf.mlp.run(&clf.params, &x)?;
            let (loss, g) = softmax_cross_entropy(&logits, labels, &weights);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "classifier loss is not finite".into(),
                });
            }
            let mut grads = Grads::zeros_like(&clf.params);
            clf.mlp.run_backward(&clf.params, &trace, &g, &mut grads);
            if cfg.weight_decay > 0.0 {
                for (gb, pb) in grads.blocks_mut().iter_mut().zip(clf.params.blocks()) {
                    for (gv, pv) in gb.data_mut().iter_mut().zip(pb.value.data()) {
                        *gv += cfg.weight_decay * pv;
                    }
                }
            }
            adam.update(&mut clf.params, &grads)?;
        }
        clf.trained = true;
        Ok(clf)
    }

    /// Class log-probabilities for each feature row.
    pub fn log_probs(&self, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if !self.trained {
            return Err(Error::Untrained("activity classifier".into()));
        }
        let x = self.standardize(features)?;
        let (logits, _) = self.mlp.run(&self.params, &x)?;
        let lp = log_softmax(&logits);
        Ok((0..lp.rows()).map(|r| lp.row(r).to_vec()).collect())
    }

    /// Arg-max class index; ties go to the lowest index.
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let lp = self.log_probs(std::slice::from_ref(&features.to_vec()))?;
        Ok(argmax(&lp[0]))
    }

    pub fn accuracy(&self, features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
        let lp = self.log_probs(features)?;
        let hits = lp.iter().zip(labels).filter(|(p, &l)| argmax(p) == l).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted activity for a power matrix `[n * packets + w]`.
pub fn classify_activity(
    power: &[f64],
    subcarriers: usize,
    packets: usize,
    extractor: &FeatureExtractor,
    classifier: &ActivityClassifier,
) -> Result<ActivityKind> {
    let f = extractor.extract(power, subcarriers, packets)?;
    Ok(classifier.classes[classifier.predict(&f)?])
}
