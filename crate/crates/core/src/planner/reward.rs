//! Geometric sensing SNR and the constrained link-activation reward.

use serde::{Deserialize, Serialize};

use super::graph::{ActivationGraph, NodeRole};
use crate::channel::{CsiTrace, Layout};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    /// Weight of the summed link SSNR.
    pub alpha1: f64,
    /// Cost per transmitter.
    pub alpha2: f64,
    /// Cost per link.
    pub alpha3: f64,
    /// Transmit power and antenna gain factor.
    pub theta: f64,
    /// Effective reflection area of the user, m^2.
    pub sigma: f64,
    pub gamma: f64,
    pub b: f64,
    /// Penalty per violated constraint.
    pub penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            alpha1: 100.0,
            alpha2: 2.0,
            alpha3: 1.0,
            theta: 1.0,
            sigma: 0.5,
            gamma: 1.0,
            b: 0.1,
            penalty: 10.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha1, self.alpha2, self.alpha3, self.theta, self.sigma, self.gamma, self.b, self.penalty,
        ];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("reward parameters must be positive and finite".into()));
        }
        Ok(())
    }
}

/// `theta sigma / (4 pi (d_tx d_rx)^2 (gamma theta / d_D^2 + b))`.
pub fn ssnr_link(layout: &Layout, tx: usize, rx: usize, p: &RewardParams) -> Result<f64> {
    if tx == rx {
        return Err(Error::InvalidArgument("a link needs distinct devices".into()));
    }
    let d_tx = layout.user_distance(tx);
    let d_rx = layout.user_distance(rx);
    let d_d = layout.devices[tx].dist(layout.devices[rx]);
    if d_tx == 0.0 || d_rx == 0.0 || d_d == 0.0 {
        return Err(Error::Degenerate(format!("coincident points on link {tx} -> {rx}")));
    }
    Ok(p.theta * p.sigma
        / (4.0 * std::f64::consts::PI * (d_tx * d_rx).powi(2) * (p.gamma * p.theta / (d_d * d_d) + p.b)))
}

/// Measured SSNR: dynamic path power over `|H_s + n|^2`, averaged over all
/// subcarriers and packets.
pub fn ssnr_from_paths(trace: &CsiTrace) -> f64 {
    let dynamic: f64 = trace.dynamic_paths.iter().map(|p| p.attenuation.norm_sqr()).sum();
    if dynamic == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for n in 0..trace.subcarriers {
        for w in 0..trace.packets {
            acc += dynamic / (trace.static_component[n] + trace.noise[n * trace.packets + w]).norm_sqr();
        }
    }
    acc / (trace.subcarriers * trace.packets) as f64
}

/// Pairwise SSNR for every device pair of a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkTable {
    pub n: usize,
    ssnr: Vec<f64>,
}

impl LinkTable {
    pub fn new(layout: &Layout, p: &RewardParams) -> Result<Self> {
        let n = layout.len();
        let mut ssnr = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    ssnr[i * n + j] = ssnr_link(layout, i, j, p)?;
                }
            }
        }
        Ok(LinkTable { n, ssnr })
    }

    pub fn get(&self, tx: usize, rx: usize) -> f64 {
        self.ssnr[tx * self.n + rx]
    }
}

/// Number of violated activation constraints.
pub fn violations(g: &ActivationGraph) -> usize {
    let n = g.len();
    let tx = g.count(NodeRole::Tx);
    let rx = g.count(NodeRole::Rx);
    let edges = g.active_edges();
    let links = edges.len();
    let mut v = 0;
    v += (tx < 1) as usize;
    v += (tx >= n) as usize;
    v += (rx < 1) as usize;
    v += (rx >= n) as usize;
    v += (links < 1) as usize;
    v += (links > tx * (n - tx)) as usize;
    let role = |i: usize| g.roles[i];
    v += edges.iter().any(|&(i, j)| role(i) == NodeRole::Tx && role(j) == NodeRole::Tx) as usize;
    v += edges.iter().any(|&(i, j)| role(i) == NodeRole::Rx && role(j) == NodeRole::Rx) as usize;
    v += edges
        .iter()
        .any(|&(i, j)| role(i) == NodeRole::Idle || role(j) == NodeRole::Idle) as usize;
    v
}

pub fn is_valid(g: &ActivationGraph) -> bool {
    violations(g) == 0
}

pub fn reward_with_table(g: &ActivationGraph, table: &LinkTable, p: &RewardParams) -> f64 {
    let v = violations(g);
    if v > 0 {
        return -p.penalty * v as f64;
    }
    let links = g.links();
    let total: f64 = links.iter().map(|&(t, r)| table.get(t, r)).sum();
    p.alpha1 * total - p.alpha2 * g.count(NodeRole::Tx) as f64 - p.alpha3 * links.len() as f64
}

/// `alpha1 * sum SSNR - alpha2 * #Tx - alpha3 * #Link` for valid graphs,
/// otherwise `-penalty * violations`.
pub fn reward(g: &ActivationGraph, layout: &Layout, p: &RewardParams) -> Result<f64> {
    if g.len() != layout.len() {
        return Err(Error::Shape {
            block: "reward".into(),
            expected: vec![layout.len()],
            actual: vec![g.len()],
        });
    }
    Ok(reward_with_table(g, &LinkTable::new(layout, p)?, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Point;

    #[test]
    fn unit_geometry_value() {
        // user at the apex of an equilateral triangle with the two devices
        let h = (3.0f64).sqrt() / 2.0;
        let l = Layout::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)], Point::new(0.5, h)).unwrap();
        let p = RewardParams {
            theta: 1.0,
            sigma: 1.0,
            gamma: 1.0,
            b: 0.0,
            ..RewardParams::default()
        };
        let v = ssnr_link(&l, 0, 1, &p).unwrap();
        assert!((v - 1.0 / (4.0 * std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn empty_graph_is_invalid() {
        let g = ActivationGraph::empty(3);
        assert!(violations(&g) >= 1);
    }
}
