//! Exact optimum by enumeration, and the greedy and random baselines.

use std::cmp::Ordering;

use rand::Rng;

use super::graph::{ActivationGraph, NodeRole};
use super::reward::{is_valid, reward_with_table, LinkTable, RewardParams};
use crate::channel::Layout;
use crate::error::{Error, Result};

pub const MAX_BRUTE_FORCE_NODES: usize = 8;

fn better(a: &(ActivationGraph, f64), b: &(ActivationGraph, f64)) -> bool {
    match a.1.total_cmp(&b.1) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.0.encoding() < b.0.encoding(),
    }
}

fn roles_from_code(mut code: usize, n: usize) -> Vec<NodeRole> {
    (0..n)
        .map(|_| {
            let r = NodeRole::from_index(code % 3);
            code /= 3;
            r
        })
        .collect()
}

/// Best edge set for fixed roles: every Tx-Rx link with positive marginal
/// value, or the single best link when none is positive.
fn best_edges_for_roles(roles: &[NodeRole], table: &LinkTable, p: &RewardParams) -> Vec<(ActivationGraph, f64)> {
    let n = roles.len();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (t, r) = match (roles[i], roles[j]) {
                (NodeRole::Tx, NodeRole::Rx) => (i, j),
                (NodeRole::Rx, NodeRole::Tx) => (j, i),
                _ => continue,
            };
            pairs.push(((i, j), p.alpha1 * table.get(t, r) - p.alpha3));
        }
    }
    if pairs.is_empty() {
        return Vec::new();
    }
    let positive: Vec<(usize, usize)> = pairs.iter().filter(|(_, m)| *m > 0.0).map(|(e, _)| *e).collect();
    let chosen: Vec<Vec<(usize, usize)>> = if positive.is_empty() {
        let top = pairs.iter().map(|(_, m)| *m).fold(f64::NEG_INFINITY, f64::max);
        pairs.iter().filter(|(_, m)| *m == top).map(|(e, _)| vec![*e]).collect()
    } else {
        vec![positive]
    };
    chosen
        .into_iter()
        .map(|edges| {
            let g = ActivationGraph::from_parts(roles.to_vec(), &edges).expect("edges within range");
            let r = reward_with_table(&g, table, p);
            (g, r)
        })
        .collect()
}

/// Exact reward maximizer; ties go to the lexicographically smallest
/// graph encoding.
pub fn brute_force_optimum(layout: &Layout, p: &RewardParams) -> Result<(ActivationGraph, f64)> {
    let n = layout.len();
    if n > MAX_BRUTE_FORCE_NODES {
        return Err(Error::InvalidArgument(format!(
            "brute force is limited to {MAX_BRUTE_FORCE_NODES} devices, got {n}"
        )));
    }
    let table = LinkTable::new(layout, p)?;
    let mut best: Option<(ActivationGraph, f64)> = None;
    for code in 0..3usize.pow(n as u32) {
        let roles = roles_from_code(code, n);
        for cand in best_edges_for_roles(&roles, &table, p) {
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
    }
    best.ok_or_else(|| Error::Degenerate("no valid activation graph exists".into()))
}

/// Exhaustive search over every role assignment and every edge subset.
/// Exponential in `n^2`; intended as a cross-check for small layouts.
pub fn exhaustive_optimum(layout: &Layout, p: &RewardParams) -> Result<(ActivationGraph, f64)> {
    let n = layout.len();
    if n > 5 {
        return Err(Error::InvalidArgument("exhaustive search is limited to 5 devices".into()));
    }
    let table = LinkTable::new(layout, p)?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let mut best: Option<(ActivationGraph, f64)> = None;
    for code in 0..3usize.pow(n as u32) {
        let roles = roles_from_code(code, n);
        for mask in 0..1usize << pairs.len() {
            let edges: Vec<(usize, usize)> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask >> k & 1 == 1)
                .map(|(_, e)| *e)
                .collect();
            let g = ActivationGraph::from_parts(roles.clone(), &edges)?;
            let cand = (g.clone(), reward_with_table(&g, &table, p));
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
    }
    Ok(best.expect("at least one graph"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    Node,
    Link,
}

const GREEDY_COUNT: usize = 4;

/// Node mode: the four devices nearest the user, with the Tx/Rx split that
/// maximizes the reward when every Tx-Rx pair among them is linked.
/// Link mode: the four highest-SSNR device pairs that keep a consistent
/// Tx/Rx orientation, the smaller side of each component transmitting.
pub fn baseline_greedy(layout: &Layout, p: &RewardParams, mode: BaselineMode) -> Result<(ActivationGraph, f64)> {
    let n = layout.len();
    if n < 2 {
        return Err(Error::InvalidLayout("need at least 2 devices".into()));
    }
    let table = LinkTable::new(layout, p)?;
    match mode {
        BaselineMode::Node => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| layout.user_distance(a).total_cmp(&layout.user_distance(b)).then(a.cmp(&b)));
            let picked = &order[..GREEDY_COUNT.min(n)];
            let mut best: Option<(ActivationGraph, f64)> = None;
            for mask in 1..(1usize << picked.len()) - 1 {
                let mut roles = vec![NodeRole::Idle; n];
                for (k, &d) in picked.iter().enumerate() {
                    roles[d] = if mask >> k & 1 == 1 { NodeRole::Tx } else { NodeRole::Rx };
                }
                let g = full_bipartite(roles)?;
                let cand = (g.clone(), reward_with_table(&g, &table, p));
                if best.as_ref().is_none_or(|b| better(&cand, b)) {
                    best = Some(cand);
                }
            }
            Ok(best.expect("at least one split"))
        }
        BaselineMode::Link => {
            let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
            pairs.sort_by(|a, b| table.get(b.0, b.1).total_cmp(&table.get(a.0, a.1)).then(a.cmp(b)));
            let mut color: Vec<Option<bool>> = vec![None; n];
            let mut comp: Vec<usize> = (0..n).collect();
            let mut chosen = Vec::new();
            for &(i, j) in &pairs {
                if chosen.len() == GREEDY_COUNT {
                    break;
                }
                if try_add_edge(&mut color, &mut comp, i, j) {
                    chosen.push((i, j));
                }
            }
            let mut roles = vec![NodeRole::Idle; n];
            for c in 0..n {
                let members: Vec<usize> = (0..n).filter(|&v| comp[v] == c && color[v].is_some()).collect();
                if members.is_empty() {
                    continue;
                }
                let ones = members.iter().filter(|&&v| color[v] == Some(true)).count();
                let tx_color = ones * 2 <= members.len();
                for &v in &members {
                    roles[v] = if color[v] == Some(tx_color) { NodeRole::Tx } else { NodeRole::Rx };
                }
            }
            let g = ActivationGraph::from_parts(roles, &chosen)?;
            let r = reward_with_table(&g, &table, p);
            Ok((g, r))
        }
    }
}

fn relabel(comp: &mut [usize], from: usize, to: usize) {
    for c in comp.iter_mut() {
        if *c == from {
            *c = to;
        }
    }
}

/// Two-color `i` and `j` differently if possible, merging components.
fn try_add_edge(color: &mut [Option<bool>], comp: &mut [usize], i: usize, j: usize) -> bool {
    match (color[i], color[j]) {
        (None, None) => {
            color[i] = Some(true);
            color[j] = Some(false);
            relabel(comp, comp[j], comp[i]);
            true
        }
        (Some(ci), None) => {
            color[j] = Some(!ci);
            relabel(comp, comp[j], comp[i]);
            true
        }
        (None, Some(cj)) => {
            color[i] = Some(!cj);
            relabel(comp, comp[i], comp[j]);
            true
        }
        (Some(ci), Some(cj)) => {
            if comp[i] == comp[j] {
                return ci != cj;
            }
            if ci == cj {
                let (ki, kj) = (comp[i], comp[j]);
                for v in 0..color.len() {
                    if comp[v] == kj {
                        color[v] = color[v].map(|c| !c);
                    }
                }
                relabel(comp, kj, ki);
            } else {
                relabel(comp, comp[j], comp[i]);
            }
            true
        }
    }
}

fn full_bipartite(roles: Vec<NodeRole>) -> Result<ActivationGraph> {
    let n = roles.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if matches!(
                (roles[i], roles[j]),
                (NodeRole::Tx, NodeRole::Rx) | (NodeRole::Rx, NodeRole::Tx)
            ) {
                edges.push((i, j));
            }
        }
    }
    ActivationGraph::from_parts(roles, &edges)
}

fn random_roles(n: usize, rng: &mut impl Rng) -> Vec<NodeRole> {
    loop {
        let roles: Vec<NodeRole> = (0..n).map(|_| NodeRole::from_index(rng.random_range(0..3))).collect();
        if roles.contains(&NodeRole::Tx) && roles.contains(&NodeRole::Rx) {
            return roles;
        }
    }
}

/// Node mode: uniform roles with every Tx-Rx pair linked. Link mode:
/// uniform roles, each Tx-Rx pair linked with probability 1/2, at least one.
pub fn baseline_random(
    layout: &Layout,
    p: &RewardParams,
    mode: BaselineMode,
    rng: &mut impl Rng,
) -> Result<(ActivationGraph, f64)> {
    let n = layout.len();
    if n < 2 {
        return Err(Error::InvalidLayout("need at least 2 devices".into()));
    }
    let table = LinkTable::new(layout, p)?;
    let g = match mode {
        BaselineMode::Node => full_bipartite(random_roles(n, rng))?,
        BaselineMode::Link => loop {
            let full = full_bipartite(random_roles(n, rng))?;
            let keep: Vec<(usize, usize)> = full.active_edges().into_iter().filter(|_| rng.random_bool(0.5)).collect();
            if !keep.is_empty() {
                break ActivationGraph::from_parts(full.roles.clone(), &keep)?;
            }
        },
    };
    debug_assert!(is_valid(&g));
    let r = reward_with_table(&g, &table, p);
    Ok((g, r))
}
