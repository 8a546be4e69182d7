//! Finite-difference verification of every trainable layer and of both
//! denoising networks.

use rand::Rng;
use serde::Serialize;

use crate::channel::{Layout, Point};
use crate::error::Result;
use crate::nn::gradcheck::GradcheckReport;
use crate::nn::layers::softmax_cross_entropy;
use crate::nn::{gradcheck, Film, Grads, GraphTransformerLayer, LayerNorm, Linear, Mlp, NetworkParams, Tensor};
use crate::planner::model::uniform_graph;
use crate::planner::{PlannerArch, PlannerCondition, PlannerModel, RewardParams};
use crate::rng;
use crate::safeguard::SignalDenoiser;

/// Coordinates probed per check, on top of one per parameter block.
pub const COORDS: usize = 200;

#[derive(Debug, Clone, Serialize)]
pub struct LayerCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst: Option<(String, usize)>,
}

impl LayerCheck {
    fn new(name: &'static str, r: GradcheckReport) -> Self {
        LayerCheck {
            name,
            max_rel_error: r.max_rel_error,
            coords_checked: r.coords_checked,
            worst: r.worst,
        }
    }
}

fn random_tensor(shape: &[usize], r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// Move every parameter off zero and away from identity initializations.
fn jitter(p: &mut NetworkParams, r: &mut impl Rng) {
    for b in p.blocks_mut() {
        for v in b.value.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
}

fn dense(seed: u64) -> Result<LayerCheck> {
    let mut r = rng::stream(seed, 1);
    let mut p = NetworkParams::new(seed);
    let lin = Linear::new(&mut p, "dense", 6, 4, &mut r)?;
    let x = random_tensor(&[5, 6], &mut r);
    let proj = random_tensor(&[5, 4], &mut r);
    let rep = gradcheck(
        &p,
        |p| {
            let y = lin.forward(p, &x)?;
            let mut g = Grads::zeros_like(p);
            lin.backward(p, &x, &proj, &mut g);
            Ok((y.dot(&proj), g))
        },
        COORDS,
        seed,
    )?;
    Ok(LayerCheck::new("linear", rep))
}

fn norm_film(seed: u64) -> Result<LayerCheck> {
    let mut r = rng::stream(seed, 2);
    let mut p = NetworkParams::new(seed);
    let lin = Linear::new(&mut p, "pre", 3, 8, &mut r)?;
    let ln = LayerNorm::new(&mut p, "ln", 8, &mut r)?;
    let film = Film::new(&mut p, "film", 4, 8, &mut r)?;
    jitter(&mut p, &mut r);
    let x = random_tensor(&[5, 3], &mut r);
    let cond: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
    let proj = random_tensor(&[5, 8], &mut r);
    let rep = gradcheck(
        &p,
        |p| {
            let z = lin.forward(p, &x)?;
            let (n, lt) = ln.forward(p, &z)?;
            let (y, ft) = film.forward(p, &n, &cond)?;
            let mut g = Grads::zeros_like(p);
            let gn = film.backward(p, &n, &ft, &proj, &mut g);
            let gz = ln.backward(p, &lt, &gn, &mut g);
            lin.backward(p, &x, &gz, &mut g);
            Ok((y.dot(&proj), g))
        },
        COORDS,
        seed,
    )?;
    Ok(LayerCheck::new("layernorm+film", rep))
}

fn mlp_softmax(seed: u64) -> Result<LayerCheck> {
    let mut r = rng::stream(seed, 3);
    let mut p = NetworkParams::new(seed);
    let mlp = Mlp::new(&mut p, "mlp", &[5, 12, 12, 3], &mut r)?;
    let x = random_tensor(&[7, 5], &mut r);
    let targets = [0, 1, 2, 2, 1, 0, 1];
    let weights = [1.0, 0.5, 2.0, 1.0, 0.7, 0.3, 1.5];
    let rep = gradcheck(
        &p,
        |p| {
            let (logits, trace) = mlp.run(p, &x)?;
            let (l, gl) = softmax_cross_entropy(&logits, &targets, &weights);
            let mut g = Grads::zeros_like(p);
            mlp.run_backward(p, &trace, &gl, &mut g);
            Ok((l, g))
        },
        COORDS,
        seed,
    )?;
    Ok(LayerCheck::new("mlp+softmax", rep))
}

fn attention(seed: u64) -> Result<LayerCheck> {
    let mut r = rng::stream(seed, 4);
    let mut p = NetworkParams::new(seed);
    let n = 4;
    let layer = GraphTransformerLayer::new(&mut p, "gt", 8, 6, 5, &mut r)?;
    jitter(&mut p, &mut r);
    let h = random_tensor(&[n, 8], &mut r);
    let e = random_tensor(&[n, n, 6], &mut r);
    let cond: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
    let ph = random_tensor(&[n, 8], &mut r);
    let pe = random_tensor(&[n, n, 6], &mut r);
    let rep = gradcheck(
        &p,
        |p| {
            let (ho, eo, t) = layer.forward(p, &h, &e, Some(&cond))?;
            let mut g = Grads::zeros_like(p);
            layer.backward(p, &t, &ph, &pe, &mut g)?;
            Ok((ho.dot(&ph) + eo.dot(&pe), g))
        },
        COORDS,
        seed,
    )?;
    Ok(LayerCheck::new("graph-attention", rep))
}

fn planner(seed: u64) -> Result<LayerCheck> {
    let mut r = rng::stream(seed, 5);
    let arch = PlannerArch {
        hidden: 8,
        edge_dim: 4,
        layers: 1,
    };
    let mut m = PlannerModel::new(&arch, 6, 4.0, seed)?;
    jitter(&mut m.params, &mut r);
    let layout = Layout::new(
        vec![
            Point::new(0.3, 0.4),
            Point::new(3.6, 0.5),
            Point::new(3.4, 3.5),
            Point::new(0.5, 3.2),
            Point::new(2.0, 0.2),
        ],
        Point::new(1.8, 2.1),
    )?;
    let cond = PlannerCondition::from_layout(&layout, &RewardParams::default(), 4.0)?;
    let g_t = uniform_graph(layout.len(), &mut r);
    let target = uniform_graph(layout.len(), &mut r);
    let net = m.net.clone();
    let rep = gradcheck(
        &m.params,
        |p| {
            let mut g = Grads::zeros_like(p);
            let lp = net.accumulate_log_prob_grad(p, &g_t, 3, &cond, &target, 1.0, &mut g)?;
            Ok((lp, g))
        },
        COORDS,
        seed,
    )?;
    Ok(LayerCheck::new("planner-denoiser", rep))
}

fn safeguard(seed: u64) -> Result<LayerCheck> {
    let mut r = rng::stream(seed, 6);
    let mut p = NetworkParams::new(seed);
    let net = SignalDenoiser::new(&mut p, 12, 3, 10, 6, &mut r)?;
    jitter(&mut p, &mut r);
    let x: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
    let eps: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
    let cond = [0.2, -0.5, 0.9];
    let rep = gradcheck(
        &p,
        |p| {
            let (y, tr) = net.forward(p, &x, &cond, 17)?;
            let diff: Vec<f64> = y.iter().zip(&eps).map(|(a, b)| a - b).collect();
            let mut g = Grads::zeros_like(p);
            net.backward(p, &tr, &diff, &mut g);
            Ok((0.5 * diff.iter().map(|d| d * d).sum::<f64>(), g))
        },
        COORDS,
        seed,
    )?;
    Ok(LayerCheck::new("safeguard-denoiser", rep))
}

/// Run every check; each report holds the worst relative error found.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<LayerCheck>> {
    Ok(vec![
        dense(seed)?,
        norm_film(seed)?,
        mlp_softmax(seed)?,
        attention(seed)?,
        planner(seed)?,
        safeguard(seed)?,
    ])
}
