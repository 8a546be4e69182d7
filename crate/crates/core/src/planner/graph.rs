//! Activation graphs: a role per device and a symmetric set of active edges.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeRole {
    Tx = 0,
    Rx = 1,
    Idle = 2,
}

impl NodeRole {
    pub const ALL: [NodeRole; 3] = [NodeRole::Tx, NodeRole::Rx, NodeRole::Idle];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }
}

/// Edge categories are `0 = Absent`, `1 = Active`.
pub const EDGE_CATEGORIES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActivationGraph {
    pub roles: Vec<NodeRole>,
    /// Row-major `n x n`, symmetric, zero diagonal.
    edges: Vec<bool>,
}

impl ActivationGraph {
    pub fn empty(n: usize) -> Self {
        ActivationGraph {
            roles: vec![NodeRole::Idle; n],
            edges: vec![false; n * n],
        }
    }

    pub fn from_parts(roles: Vec<NodeRole>, links: &[(usize, usize)]) -> Result<Self> {
        let mut g = ActivationGraph {
            edges: vec![false; roles.len() * roles.len()],
            roles,
        };
        for &(a, b) in links {
            g.set_edge(a, b, true)?;
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn edge(&self, i: usize, j: usize) -> bool {
        self.edges[i * self.len() + j]
    }

    pub fn set_edge(&mut self, i: usize, j: usize, on: bool) -> Result<()> {
        let n = self.len();
        if i == j || i >= n || j >= n {
            return Err(Error::InvalidArgument(format!("invalid edge ({i}, {j}) for {n} nodes")));
        }
        self.edges[i * n + j] = on;
        self.edges[j * n + i] = on;
        Ok(())
    }

    /// Active edges as `(i, j)` with `i < j`.
    pub fn active_edges(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Active edges oriented `(tx, rx)`; edges not joining a Tx to an Rx are skipped.
    pub fn links(&self) -> Vec<(usize, usize)> {
        self.active_edges()
            .into_iter()
            .filter_map(|(i, j)| match (self.roles[i], self.roles[j]) {
                (NodeRole::Tx, NodeRole::Rx) => Some((i, j)),
                (NodeRole::Rx, NodeRole::Tx) => Some((j, i)),
                _ => None,
            })
            .collect()
    }

    pub fn count(&self, role: NodeRole) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    /// Node categories then upper-triangle edge bits; orders graphs for tie-breaking.
    pub fn encoding(&self) -> Vec<u8> {
        let mut v: Vec<u8> = self.roles.iter().map(|r| r.index() as u8).collect();
        v.extend(self.active_edges_mask());
        v
    }

    fn active_edges_mask(&self) -> Vec<u8> {
        let n = self.len();
        let mut v = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                v.push(self.edge(i, j) as u8);
            }
        }
        v
    }

    /// Relabel devices: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.len();
        let mut g = ActivationGraph::empty(n);
        for i in 0..n {
            g.roles[perm[i]] = self.roles[i];
            for j in 0..n {
                g.edges[perm[i] * n + perm[j]] = self.edge(i, j);
            }
        }
        g
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&GraphFile::from(self))?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f: GraphFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        f.try_into()
    }
}

impl fmt::Display for ActivationGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let roles: Vec<&str> = self
            .roles
            .iter()
            .map(|r| match r {
                NodeRole::Tx => "Tx",
                NodeRole::Rx => "Rx",
                NodeRole::Idle => "-",
            })
            .collect();
        write!(f, "[{}] links {:?}", roles.join(" "), self.links())
    }
}

/// On-disk graph: category list plus adjacency matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphFile {
    roles: Vec<NodeRole>,
    adjacency: Vec<Vec<u8>>,
}

impl From<&ActivationGraph> for GraphFile {
    fn from(g: &ActivationGraph) -> Self {
        let n = g.len();
        GraphFile {
            roles: g.roles.clone(),
            adjacency: (0..n).map(|i| (0..n).map(|j| g.edge(i, j) as u8).collect()).collect(),
        }
    }
}

impl TryFrom<GraphFile> for ActivationGraph {
    type Error = Error;

    fn try_from(f: GraphFile) -> Result<Self> {
        let n = f.roles.len();
        if f.adjacency.len() != n || f.adjacency.iter().any(|r| r.len() != n) {
            return Err(Error::Format("adjacency must be n x n".into()));
        }
        let mut g = ActivationGraph::empty(n);
        g.roles = f.roles;
        for i in 0..n {
            if f.adjacency[i][i] != 0 {
                return Err(Error::Format("graph has a self edge".into()));
            }
            for j in 0..n {
                if f.adjacency[i][j] != f.adjacency[j][i] || f.adjacency[i][j] > 1 {
                    return Err(Error::Format("adjacency must be symmetric 0/1".into()));
                }
                g.edges[i * n + j] = f.adjacency[i][j] == 1;
            }
        }
        Ok(g)
    }
}
