//! Conditional graph-transformer denoiser, the reverse sampler and
//! policy-gradient training against the activation reward.

use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::diffusion::{reverse_distribution, sample_categorical, TransitionSchedule};
use super::graph::{ActivationGraph, NodeRole, EDGE_CATEGORIES};
use super::reward::{reward_with_table, violations, LinkTable, RewardParams};
use crate::channel::Layout;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::nn::layers::{log_softmax, sinusoidal_embedding, Linear};
use crate::nn::mlp::{Mlp, MlpTrace};
use crate::nn::{AdamConfig, AdamState, GraphLayerTrace, GraphTransformerLayer, Grads, NetworkParams, Tensor};
use crate::rng::{self, streams};

pub const NODE_FEATURES: usize = 5;
pub const EDGE_FEATURES: usize = 2;
pub const GLOBAL_FEATURES: usize = 3;
const TIME_DIM: usize = 16;
const MAX_NODES_SCALE: f64 = 8.0;
pub const MAX_RESAMPLES: usize = 50;

/// Layout features. Per node: position, offset to the user and distance to
/// the user. Per pair: device distance and `ln(1 + alpha1 ssnr / alpha3)`.
/// Global: user position and device count / 8. Lengths are divided by the
/// arena size.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannerCondition {
    pub n: usize,
    pub node: Vec<f64>,
    pub edge: Vec<f64>,
    pub global: Vec<f64>,
}

impl PlannerCondition {
    pub fn new(layout: &Layout, table: &LinkTable, reward: &RewardParams, arena: f64) -> Result<Self> {
        if !(arena > 0.0) {
            return Err(Error::InvalidArgument("arena must be positive".into()));
        }
        let n = layout.len();
        let u = layout.user;
        let mut node = Vec::with_capacity(n * NODE_FEATURES);
        for (i, d) in layout.devices.iter().enumerate() {
            node.extend([
                d.x / arena,
                d.y / arena,
                (d.x - u.x) / arena,
                (d.y - u.y) / arena,
                layout.user_distance(i) / arena,
            ]);
        }
        let mut edge = vec![0.0; n * n * EDGE_FEATURES];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = (i * n + j) * EDGE_FEATURES;
                edge[k] = layout.devices[i].dist(layout.devices[j]) / arena;
                edge[k + 1] = (reward.alpha1 * table.get(i, j) / reward.alpha3).ln_1p();
            }
        }
        let global = vec![u.x / arena, u.y / arena, n as f64 / MAX_NODES_SCALE];
        let c = PlannerCondition { n, node, edge, global };
        if c.node.iter().chain(&c.edge).chain(&c.global).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("planner condition".into()));
        }
        Ok(c)
    }

    pub fn from_layout(layout: &Layout, reward: &RewardParams, arena: f64) -> Result<Self> {
        Self::new(layout, &LinkTable::new(layout, reward)?, reward, arena)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerArch {
    pub hidden: usize,
    pub edge_dim: usize,
    pub layers: usize,
}

impl Default for PlannerArch {
    fn default() -> Self {
        PlannerArch {
            hidden: 64,
            edge_dim: 32,
            layers: 2,
        }
    }
}

/// Node and edge embeddings, a stack of graph transformer layers with FiLM
/// conditioning on `[global features; time embedding]`, and zero-initialized
/// heads predicting the clean graph.
#[derive(Debug, Clone)]
pub struct PlannerNet {
    pub arch: PlannerArch,
    node_in: Linear,
    edge_in: Linear,
    layers: Vec<GraphTransformerLayer>,
    node_head: Linear,
    edge_head: Mlp,
    alpha_bars: Vec<f64>,
}

pub struct PlannerTrace {
    node_x: Tensor,
    edge_x: Tensor,
    layers: Vec<GraphLayerTrace>,
    node_h: Tensor,
    edge_trace: MlpTrace,
}

/// Clean-graph predictions: per-node log-probabilities over roles and
/// per-pair (`i < j`, row-major) log-probabilities over edge categories.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPrediction {
    pub node_logp: Vec<[f64; 3]>,
    pub edge_logp: Vec<[f64; 2]>,
}

/// `[log q(seen | x0 = other), log q(seen | x0 = seen)]` under uniform mixing
/// with retention `abar` over `a` categories. The network output acts as a
/// prior over the clean graph and this term as the likelihood of `G_t`.
fn kernel_log_likelihood(abar: f64, a: usize) -> [f64; 2] {
    let off = (1.0 - abar) / a as f64;
    [off.max(1e-12).ln(), (abar + off).ln()]
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

impl PlannerNet {
    pub fn new(
        params: &mut NetworkParams,
        arch: &PlannerArch,
        schedule: &TransitionSchedule,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if arch.hidden == 0 || arch.edge_dim == 0 {
            return Err(Error::InvalidArgument("planner widths must be positive".into()));
        }
        let cond_dim = GLOBAL_FEATURES + TIME_DIM;
        let node_in = Linear::new(params, "pl.node_in", NodeRole::COUNT + NODE_FEATURES, arch.hidden, rng)?;
        let edge_in = Linear::new(params, "pl.edge_in", EDGE_CATEGORIES + EDGE_FEATURES, arch.edge_dim, rng)?;
        let layers = (0..arch.layers)
            .map(|l| GraphTransformerLayer::new(params, &format!("pl.gt{l}"), arch.hidden, arch.edge_dim, cond_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        let node_head = Linear::zeroed(params, "pl.node_head", arch.hidden, NodeRole::COUNT, rng)?;
        let edge_head = Mlp::with_zero_head(
            params,
            "pl.edge_head",
            &[arch.edge_dim + arch.hidden, arch.hidden, EDGE_CATEGORIES],
            rng,
        )?;
        Ok(PlannerNet {
            arch: arch.clone(),
            node_in,
            edge_in,
            layers,
            node_head,
            edge_head,
            alpha_bars: (0..=schedule.steps()).map(|t| schedule.alpha_bar(t)).collect(),
        })
    }

    fn context(cond: &PlannerCondition, t: usize) -> Vec<f64> {
        let mut c = cond.global.clone();
        c.extend(sinusoidal_embedding(t as f64, TIME_DIM));
        c
    }

    pub fn forward(
        &self,
        p: &NetworkParams,
        g: &ActivationGraph,
        cond: &PlannerCondition,
        t: usize,
    ) -> Result<(GraphPrediction, PlannerTrace)> {
        let n = g.len();
        if cond.n != n {
            return Err(Error::Shape {
                block: "pl.condition".into(),
                expected: vec![n],
                actual: vec![cond.n],
            });
        }
        let ctx = Self::context(cond, t);
        let nw = NodeRole::COUNT + NODE_FEATURES;
        let node_x = Tensor::from_fn(&[n, nw], |k| {
            let (i, c) = (k / nw, k % nw);
            if c < NodeRole::COUNT {
                (g.roles[i].index() == c) as u8 as f64
            } else {
                cond.node[i * NODE_FEATURES + c - NodeRole::COUNT]
            }
        });
        let ew = EDGE_CATEGORIES + EDGE_FEATURES;
        let edge_x = Tensor::from_fn(&[n * n, ew], |k| {
            let (ij, c) = (k / ew, k % ew);
            let (i, j) = (ij / n, ij % n);
            if i == j {
                0.0
            } else if c < EDGE_CATEGORIES {
                (g.edge(i, j) as usize == c) as u8 as f64
            } else {
                cond.edge[ij * EDGE_FEATURES + c - EDGE_CATEGORIES]
            }
        });
        let mut h = self.node_in.forward(p, &node_x)?;
        let mut e = self.edge_in.forward(p, &edge_x)?;
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (h2, e2, tr) = layer.forward(p, &h, &e, Some(&ctx))?;
            h = h2;
            e = e2;
            traces.push(tr);
        }
        let abar = *self.alpha_bars.get(t).ok_or_else(|| {
            Error::InvalidArgument(format!("step {t} outside 0..={}", self.alpha_bars.len() - 1))
        })?;
        let mut node_logits = self.node_head.forward(p, &h)?;
        let node_kernel = kernel_log_likelihood(abar, NodeRole::COUNT);
        for i in 0..n {
            let seen = g.roles[i].index();
            for (c, v) in node_logits.row_mut(i).iter_mut().enumerate() {
                *v += node_kernel[(c == seen) as usize];
            }
        }
        let (hd, ed) = (self.arch.hidden, self.arch.edge_dim);
        let pw = ed + hd;
        let pair_x = Tensor::from_fn(&[n * n, pw], |k| {
            let (ij, c) = (k / pw, k % pw);
            let (i, j) = (ij / n, ij % n);
            if c < ed {
                e.row(ij)[c]
            } else {
                h.row(i)[c - ed] * h.row(j)[c - ed]
            }
        });
        let (edge_raw, edge_trace) = self.edge_head.run(p, &pair_x)?;
        let node_lp = log_softmax(&node_logits);
        let node_logp = (0..n).map(|i| {
            let r = node_lp.row(i);
            [r[0], r[1], r[2]]
        });
        let edge_kernel = kernel_log_likelihood(abar, EDGE_CATEGORIES);
        let mut sym = Vec::with_capacity(n * (n - 1) / 2 * 2);
        for (i, j) in pairs(n) {
            let a = edge_raw.row(i * n + j);
            let b = edge_raw.row(j * n + i);
            let seen = g.edge(i, j) as usize;
            sym.push(0.5 * (a[0] + b[0]) + edge_kernel[(seen == 0) as usize]);
            sym.push(0.5 * (a[1] + b[1]) + edge_kernel[(seen == 1) as usize]);
        }
        let edge_lp = log_softmax(&Tensor::new(vec![sym.len() / 2, 2], sym)?);
        let pred = GraphPrediction {
            node_logp: node_logp.collect(),
            edge_logp: (0..edge_lp.rows()).map(|k| [edge_lp.row(k)[0], edge_lp.row(k)[1]]).collect(),
        };
        if pred.node_logp.iter().flatten().chain(pred.edge_logp.iter().flatten()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("planner prediction".into()));
        }
        Ok((
            pred,
            PlannerTrace {
                node_x,
                edge_x,
                layers: traces,
                node_h: h,
                edge_trace,
            },
        ))
    }

    /// Back-propagate gradients given with respect to the node logits
    /// (`n x 3`) and symmetrized pair logits (`pairs x 2`).
    pub fn backward(
        &self,
        p: &NetworkParams,
        tr: &PlannerTrace,
        g_node_logits: &Tensor,
        g_pair_logits: &Tensor,
        grads: &mut Grads,
    ) -> Result<()> {
        let n = tr.node_x.rows();
        let mut g_raw = Tensor::zeros(&[n * n, EDGE_CATEGORIES]);
        for (k, (i, j)) in pairs(n).enumerate() {
            let g = g_pair_logits.row(k).to_vec();
            for (c, gv) in g.iter().enumerate() {
                g_raw.row_mut(i * n + j)[c] = 0.5 * gv;
                g_raw.row_mut(j * n + i)[c] = 0.5 * gv;
            }
        }
        let mut g_h = self.node_head.backward(p, &tr.node_h, g_node_logits, grads);
        let g_pair = self.edge_head.run_backward(p, &tr.edge_trace, &g_raw, grads);
        let (hd, ed) = (self.arch.hidden, self.arch.edge_dim);
        let mut g_e = Tensor::zeros(&[n * n, ed]);
        for ij in 0..n * n {
            let (i, j) = (ij / n, ij % n);
            let gp = g_pair.row(ij);
            g_e.row_mut(ij).copy_from_slice(&gp[..ed]);
            for c in 0..hd {
                let (hi, hj) = (tr.node_h.row(i)[c], tr.node_h.row(j)[c]);
                g_h.row_mut(i)[c] += gp[ed + c] * hj;
                g_h.row_mut(j)[c] += gp[ed + c] * hi;
            }
        }
        for (layer, t) in self.layers.iter().zip(&tr.layers).rev() {
            let (a, b) = layer.backward(p, t, &g_h, &g_e, grads)?;
            g_h = a;
            g_e = b;
        }
        self.node_in.backward(p, &tr.node_x, &g_h, grads);
        self.edge_in.backward(p, &tr.edge_x, &g_e, grads);
        Ok(())
    }

    /// Adds `weight * grad log p(target | g_t)` to `grads`; returns the log-probability.
    pub fn accumulate_log_prob_grad(
        &self,
        p: &NetworkParams,
        g_t: &ActivationGraph,
        t: usize,
        cond: &PlannerCondition,
        target: &ActivationGraph,
        weight: f64,
        grads: &mut Grads,
    ) -> Result<f64> {
        let (pred, tr) = self.forward(p, g_t, cond, t)?;
        let n = g_t.len();
        let mut logp = 0.0;
        let mut g_node = Tensor::zeros(&[n, NodeRole::COUNT]);
        for i in 0..n {
            let k = target.roles[i].index();
            logp += pred.node_logp[i][k];
            for (c, gv) in g_node.row_mut(i).iter_mut().enumerate() {
                *gv = weight * ((c == k) as u8 as f64 - pred.node_logp[i][c].exp());
            }
        }
        let np = n * (n - 1) / 2;
        let mut g_pair = Tensor::zeros(&[np, EDGE_CATEGORIES]);
        for (k, (i, j)) in pairs(n).enumerate() {
            let y = target.edge(i, j) as usize;
            logp += pred.edge_logp[k][y];
            for (c, gv) in g_pair.row_mut(k).iter_mut().enumerate() {
                *gv = weight * ((c == y) as u8 as f64 - pred.edge_logp[k][c].exp());
            }
        }
        self.backward(p, &tr, &g_node, &g_pair, grads)?;
        Ok(logp)
    }
}

/// One reverse step: the distributions over `G_{t-1}` and a draw from them.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseStep {
    pub node_dist: Vec<[f64; 3]>,
    pub edge_dist: Vec<[f64; 2]>,
    pub sample: ActivationGraph,
}

/// Combine clean-graph predictions with the forward posterior and sample.
pub fn denoise_from_prediction(
    pred: &GraphPrediction,
    g_t: &ActivationGraph,
    t: usize,
    schedule: &TransitionSchedule,
    rng: &mut impl Rng,
) -> Result<DenoiseStep> {
    let n = g_t.len();
    let mut sample = ActivationGraph::empty(n);
    let mut node_dist = Vec::with_capacity(n);
    for i in 0..n {
        let p0: Vec<f64> = pred.node_logp[i].iter().map(|v| v.exp()).collect();
        let d = reverse_distribution(schedule, t, g_t.roles[i].index(), &p0)?;
        sample.roles[i] = NodeRole::from_index(sample_categorical(&d, rng));
        node_dist.push([d[0], d[1], d[2]]);
    }
    let mut edge_dist = Vec::with_capacity(n * (n - 1) / 2);
    for (k, (i, j)) in pairs(n).enumerate() {
        let p0: Vec<f64> = pred.edge_logp[k].iter().map(|v| v.exp()).collect();
        let d = reverse_distribution(schedule, t, g_t.edge(i, j) as usize, &p0)?;
        sample.set_edge(i, j, sample_categorical(&d, rng) == 1)?;
        edge_dist.push([d[0], d[1]]);
    }
    Ok(DenoiseStep {
        node_dist,
        edge_dist,
        sample,
    })
}

pub fn denoise_step(
    model: &PlannerModel,
    g_t: &ActivationGraph,
    t: usize,
    cond: &PlannerCondition,
    rng: &mut impl Rng,
) -> Result<DenoiseStep> {
    let (pred, _) = model.net.forward(&model.params, g_t, cond, t)?;
    denoise_from_prediction(&pred, g_t, t, &model.schedule, rng)
}

/// Uniform draw over all category assignments, the diffusion prior at `t = T`.
pub fn uniform_graph(n: usize, rng: &mut impl Rng) -> ActivationGraph {
    let mut g = ActivationGraph::empty(n);
    for i in 0..n {
        g.roles[i] = NodeRole::from_index(rng.random_range(0..NodeRole::COUNT));
    }
    for (i, j) in pairs(n) {
        g.set_edge(i, j, rng.random_bool(0.5)).expect("pair in range");
    }
    g
}

/// `trajectory[t]` is `G_t`; `trajectory[0]` is the returned graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGraph {
    pub graph: ActivationGraph,
    pub trajectory: Vec<ActivationGraph>,
}

pub fn sample_with_rng(model: &PlannerModel, cond: &PlannerCondition, rng: &mut impl Rng) -> Result<SampledGraph> {
    let steps = model.schedule.steps();
    let mut trajectory = vec![ActivationGraph::empty(cond.n); steps + 1];
    trajectory[steps] = uniform_graph(cond.n, rng);
    for t in (1..=steps).rev() {
        trajectory[t - 1] = denoise_step(model, &trajectory[t], t, cond, rng)?.sample;
    }
    Ok(SampledGraph {
        graph: trajectory[0].clone(),
        trajectory,
    })
}

pub fn sample_graph(model: &PlannerModel, cond: &PlannerCondition, seed: u64) -> Result<SampledGraph> {
    sample_with_rng(model, cond, &mut rng::stream(seed, streams::PLANNER_SAMPLE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub graph: ActivationGraph,
    pub reward: f64,
    /// Number of samples drawn.
    pub attempts: usize,
}

/// Sample until a valid graph appears (at most [`MAX_RESAMPLES`] draws);
/// otherwise return the best penalized draw.
pub fn plan(model: &PlannerModel, layout: &Layout, reward: &RewardParams, seed: u64) -> Result<Plan> {
    let table = LinkTable::new(layout, reward)?;
    let cond = PlannerCondition::new(layout, &table, reward, model.arena)?;
    let mut r = rng::stream(seed, streams::PLANNER_SAMPLE);
    let mut best: Option<Plan> = None;
    for attempt in 1..=MAX_RESAMPLES {
        let g = sample_with_rng(model, &cond, &mut r)?.graph;
        let value = reward_with_table(&g, &table, reward);
        let valid = violations(&g) == 0;
        if best.as_ref().is_none_or(|b| value > b.reward) {
            best = Some(Plan {
                graph: g,
                reward: value,
                attempts: attempt,
            });
        }
        if valid {
            let mut p = best.expect("set above");
            p.attempts = attempt;
            return Ok(p);
        }
    }
    let mut p = best.expect("at least one draw");
    p.attempts = MAX_RESAMPLES;
    Ok(p)
}

/// Highest-reward graph among `k` independent samples.
pub fn best_of(model: &PlannerModel, layout: &Layout, reward: &RewardParams, k: usize, seed: u64) -> Result<Plan> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let table = LinkTable::new(layout, reward)?;
    let cond = PlannerCondition::new(layout, &table, reward, model.arena)?;
    let mut r = rng::stream(seed, streams::PLANNER_SAMPLE);
    let mut best: Option<Plan> = None;
    for _ in 0..k {
        let g = sample_with_rng(model, &cond, &mut r)?.graph;
        let value = reward_with_table(&g, &table, reward);
        if best.as_ref().is_none_or(|b| value > b.reward) {
            best = Some(Plan {
                graph: g,
                reward: value,
                attempts: k,
            });
        }
    }
    Ok(best.expect("k > 0"))
}

#[derive(Debug, Clone)]
pub struct PlannerModel {
    pub params: NetworkParams,
    pub net: PlannerNet,
    pub schedule: TransitionSchedule,
    pub arena: f64,
    pub trained: bool,
}

fn meta_num<T: std::str::FromStr>(p: &NetworkParams, key: &str) -> Result<T> {
    p.meta_value(key)
        .ok_or_else(|| Error::Format(format!("checkpoint lacks `{key}`")))?
        .parse()
        .map_err(|_| Error::Format(format!("checkpoint field `{key}` is malformed")))
}

impl PlannerModel {
    pub fn new(arch: &PlannerArch, steps: usize, arena: f64, seed: u64) -> Result<Self> {
        let mut params = NetworkParams::new(seed);
        let mut r = rng::stream(seed, streams::PLANNER_INIT);
        let schedule = TransitionSchedule::cosine(steps)?;
        let net = PlannerNet::new(&mut params, arch, &schedule, &mut r)?;
        let mut m = PlannerModel {
            params,
            net,
            schedule,
            arena,
            trained: false,
        };
        m.params.set_meta("model", "planner");
        m.params.set_meta("hidden", arch.hidden.to_string());
        m.params.set_meta("edge_dim", arch.edge_dim.to_string());
        m.params.set_meta("layers", arch.layers.to_string());
        m.params.set_meta("steps", steps.to_string());
        m.params.set_meta("arena", arena.to_string());
        m.sync_meta();
        Ok(m)
    }

    fn sync_meta(&mut self) {
        self.params.set_meta("trained", self.trained.to_string());
    }

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
        if stored.meta_value("model") != Some("planner") {
            return Err(Error::Format("checkpoint is not a planner model".into()));
        }
        let arch = PlannerArch {
            hidden: meta_num(&stored, "hidden")?,
            edge_dim: meta_num(&stored, "edge_dim")?,
            layers: meta_num(&stored, "layers")?,
        };
        let mut m = PlannerModel::new(
            &arch,
            meta_num(&stored, "steps")?,
            meta_num(&stored, "arena")?,
            stored.seed(),
        )?;
        m.params.check_compatible(&stored)?;
        m.trained = stored.meta_value("trained") == Some("true");
        m.params = stored;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Baseline {
    /// Exponential running mean of past batch rewards.
    RunningMean { momentum: f64 },
    /// Mean reward of the samples drawn for the same layout in this batch.
    LayoutMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerTrainConfig {
    pub epochs: usize,
    /// Trajectories per epoch, `|Z|`.
    pub batch_size: usize,
    /// Distinct layouts per epoch; `batch_size` must be a multiple.
    pub layouts_per_epoch: usize,
    /// Optimizer steps per epoch; the sampled batch is split into this many
    /// consecutive chunks.
    pub minibatches: usize,
    /// Timesteps per trajectory used in the gradient, `|Gamma|`.
    pub timesteps: usize,
    pub lr: f64,
    /// Learning rate reached at the last epoch under cosine decay.
    #[serde(default)]
    pub lr_final: Option<f64>,
    pub devices: usize,
    pub arena: f64,
    pub steps: usize,
    pub baseline: Baseline,
    /// Divide advantages by the batch reward standard deviation.
    pub normalize_advantages: bool,
    /// Treat trajectories of one layout ending in the same graph as one
    /// class: each distinct graph contributes once, its members share the weight.
    pub equivalence_classes: bool,
    pub arch: PlannerArch,
    #[serde(default)]
    pub abort_checkpoint: Option<PathBuf>,
}

impl Default for PlannerTrainConfig {
    fn default() -> Self {
        PlannerTrainConfig {
            epochs: 220,
            batch_size: 256,
            layouts_per_epoch: 32,
            minibatches: 8,
            timesteps: 4,
            lr: 3e-4,
            lr_final: Some(2e-5),
            devices: 5,
            arena: 4.0,
            steps: super::diffusion::DEFAULT_STEPS,
            baseline: Baseline::LayoutMean,
            normalize_advantages: true,
            equivalence_classes: true,
            arch: PlannerArch::default(),
            abort_checkpoint: None,
        }
    }
}

/// Where training layouts come from.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingLayouts {
    /// Fresh random layouts every epoch.
    Random,
    /// Layouts drawn uniformly from a fixed pool.
    Pool(Vec<Layout>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub epoch: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardCurve {
    pub rows: Vec<RewardStats>,
}

impl RewardCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean,min,max\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.mean, r.min, r.max));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// A sampled trajectory with its reward.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub group: usize,
    pub sample: SampledGraph,
    pub reward: f64,
}

pub struct LayoutContext {
    pub table: LinkTable,
    pub cond: PlannerCondition,
}

impl LayoutContext {
    pub fn new(layout: &Layout, reward: &RewardParams, arena: f64) -> Result<Self> {
        let table = LinkTable::new(layout, reward)?;
        let cond = PlannerCondition::new(layout, &table, reward, arena)?;
        Ok(LayoutContext { table, cond })
    }
}

/// Draw `per_layout` trajectories for every context; trajectory `z` uses
/// its own stream derived from `seed`.
pub fn rollouts(
    model: &PlannerModel,
    contexts: &[LayoutContext],
    per_layout: usize,
    reward: &RewardParams,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<Rollout>> {
    map_indexed(mode, contexts.len() * per_layout, |z| {
        let group = z / per_layout;
        let ctx = &contexts[group];
        let mut r = rng::stream(rng::derive_seed(seed, z as u64), streams::PLANNER_TRAIN);
        let sample = sample_with_rng(model, &ctx.cond, &mut r)?;
        let value = reward_with_table(&sample.graph, &ctx.table, reward);
        Ok(Rollout {
            group,
            sample,
            reward: value,
        })
    })
    .into_iter()
    .collect()
}

/// Gradient of `-(1/|Z|) sum_z A_z (1/|Gamma|) sum_{t in Gamma_z} log p(G_0 | G_t)`,
/// ready for a descent step. Timesteps are drawn without replacement from `1..=T`.
pub fn policy_gradient(
    model: &PlannerModel,
    contexts: &[LayoutContext],
    batch: &[Rollout],
    advantages: &[f64],
    timesteps: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Grads> {
    let steps = model.schedule.steps();
    let gamma = timesteps.clamp(1, steps);
    let scale = 1.0 / (batch.len() as f64 * gamma as f64);
    const CHUNKS: usize = 16;
    let chunk = batch.len().div_ceil(CHUNKS).max(1);
    let parts = map_indexed(mode, batch.len().div_ceil(chunk), |c| -> Result<Grads> {
        let mut grads = Grads::zeros_like(&model.params);
        for z in c * chunk..((c + 1) * chunk).min(batch.len()) {
            let a = advantages[z];
            if a == 0.0 {
                continue;
            }
            let ro = &batch[z];
            let mut r = rng::stream(rng::derive_seed(seed, z as u64), streams::PLANNER_TRAIN);
            for k in sample_indices(&mut r, steps, gamma).into_iter() {
                let t = k + 1;
                model.net.accumulate_log_prob_grad(
                    &model.params,
                    &ro.sample.trajectory[t],
                    t,
                    &contexts[ro.group].cond,
                    &ro.sample.graph,
                    -a * scale,
                    &mut grads,
                )?;
            }
        }
        Ok(grads)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Grads::sum_ordered(&model.params, &parts))
}

/// Indices of trajectories grouped by (layout, final graph), in first-seen order.
pub fn equivalence_classes(batch: &[Rollout]) -> Vec<Vec<usize>> {
    let mut index = std::collections::HashMap::new();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for (z, ro) in batch.iter().enumerate() {
        let key = (ro.group, ro.sample.graph.encoding());
        let c = *index.entry(key).or_insert_with(|| {
            classes.push(Vec::new());
            classes.len() - 1
        });
        classes[c].push(z);
    }
    classes
}

fn epoch_layouts(source: &TrainingLayouts, cfg: &PlannerTrainConfig, seed: u64) -> Vec<Layout> {
    let mut r = rng::stream(seed, streams::LAYOUT);
    (0..cfg.layouts_per_epoch)
        .map(|_| match source {
            TrainingLayouts::Random => Layout::random(cfg.devices, cfg.arena, &mut r),
            TrainingLayouts::Pool(pool) => pool[r.random_range(0..pool.len())].clone(),
        })
        .collect()
}

/// REINFORCE over sampled trajectories with a baselined reward.
pub fn train_policy_gradient(
    layouts: &TrainingLayouts,
    reward: &RewardParams,
    cfg: &PlannerTrainConfig,
    seed: u64,
    mode: ExecMode,
    mut on_epoch: impl FnMut(&RewardStats),
) -> Result<(PlannerModel, RewardCurve)> {
    reward.validate()?;
    if cfg.layouts_per_epoch == 0 || cfg.batch_size == 0 || cfg.batch_size % cfg.layouts_per_epoch != 0 {
        return Err(Error::InvalidArgument(
            "batch size must be a positive multiple of layouts per epoch".into(),
        ));
    }
    if let TrainingLayouts::Pool(pool) = layouts {
        if pool.is_empty() {
            return Err(Error::InvalidArgument("empty layout pool".into()));
        }
    }
    let mut model = PlannerModel::new(&cfg.arch, cfg.steps, cfg.arena, seed)?;
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(cfg.lr));
    let per_layout = cfg.batch_size / cfg.layouts_per_epoch;
    let mut curve = RewardCurve::default();
    let mut running: Option<f64> = None;
    for epoch in 0..cfg.epochs {
        if let Some(end) = cfg.lr_final {
            let progress = epoch as f64 / cfg.epochs.max(1) as f64;
            adam.config.lr = end + 0.5 * (cfg.lr - end) * (1.0 + (std::f64::consts::PI * progress).cos());
        }
        let es = rng::derive_seed(seed, epoch as u64);
        let contexts = epoch_layouts(layouts, cfg, es)
            .iter()
            .map(|l| LayoutContext::new(l, reward, cfg.arena))
            .collect::<Result<Vec<_>>>()?;
        let batch = rollouts(&model, &contexts, per_layout, reward, es, mode)?;
        let rewards: Vec<f64> = batch.iter().map(|r| r.reward).collect();
        let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let stats = RewardStats {
            epoch,
            mean,
            min: rewards.iter().cloned().fold(f64::INFINITY, f64::min),
            max: rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        };
        if !mean.is_finite() {
            return Err(abort(&mut model, cfg, epoch, "non-finite reward")?);
        }
        let classes = if cfg.equivalence_classes {
            equivalence_classes(&batch)
        } else {
            (0..batch.len()).map(|z| vec![z]).collect()
        };
        let class_reward: Vec<f64> = classes.iter().map(|c| batch[c[0]].reward).collect();
        let class_group: Vec<usize> = classes.iter().map(|c| batch[c[0]].group).collect();
        let class_mean = class_reward.iter().sum::<f64>() / classes.len() as f64;
        let mut adv: Vec<f64> = match cfg.baseline {
            Baseline::RunningMean { momentum } => {
                let b = running.unwrap_or(class_mean);
                running = Some(momentum * b + (1.0 - momentum) * class_mean);
                class_reward.iter().map(|r| r - b).collect()
            }
            Baseline::LayoutMean => {
                let mut sum = vec![0.0; contexts.len()];
                let mut count = vec![0usize; contexts.len()];
                for (r, &g) in class_reward.iter().zip(&class_group) {
                    sum[g] += r;
                    count[g] += 1;
                }
                class_reward
                    .iter()
                    .zip(&class_group)
                    .map(|(r, &g)| r - sum[g] / count[g] as f64)
                    .collect()
            }
        };
        if cfg.normalize_advantages {
            let var = class_reward.iter().map(|r| (r - class_mean).powi(2)).sum::<f64>() / classes.len() as f64;
            let sd = var.sqrt();
            if sd > 1e-12 {
                adv.iter_mut().for_each(|a| *a /= sd);
            }
        }
        let mut sample_adv = vec![0.0; batch.len()];
        let share = batch.len() as f64 / classes.len() as f64;
        for (c, members) in classes.iter().enumerate() {
            for &z in members {
                sample_adv[z] = adv[c] * share / members.len() as f64;
            }
        }
        let adv = sample_adv;
        let step = batch.len().div_ceil(cfg.minibatches.max(1));
        for (m, (part, part_adv)) in batch.chunks(step).zip(adv.chunks(step)).enumerate() {
            let ms = rng::derive_seed(es, m as u64);
            let grads = policy_gradient(&model, &contexts, part, part_adv, cfg.timesteps, ms, mode)?;
            if !grads.is_finite() {
                return Err(abort(&mut model, cfg, epoch, "non-finite gradient")?);
            }
            adam.update(&mut model.params, &grads)?;
        }
        curve.rows.push(stats);
        on_epoch(&stats);
    }
    model.trained = true;
    model.sync_meta();
    Ok((model, curve))
}

fn abort(model: &mut PlannerModel, cfg: &PlannerTrainConfig, epoch: usize, reason: &str) -> Result<Error> {
    if let Some(path) = &cfg.abort_checkpoint {
        model.sync_meta();
        model.save(path)?;
    }
    Ok(Error::Diverged {
        epoch,
        reason: reason.into(),
    })
}
