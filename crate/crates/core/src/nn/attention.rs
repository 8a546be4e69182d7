//! Graph transformer layer with edge-modulated attention and FiLM conditioning.
//!
//! For node embeddings `h` (n x d) and edge embeddings `e` (n x n x de):
//!
//! ```text
//! y_ij   = (q_i * k_j) / sqrt(d) * (1 + e_ij Wm) + e_ij Wa      (n x n x d)
//! p_i.   = softmax_j(sum_c y_ijc)
//! node   = LN(h + FiLM(sum_j p_ij v_j Wo))      then FFN + residual + LN
//! edge   = LN(e + FiLM(y_ij Weo))               then FFN + residual + LN
//! ```
//!
//! All operations act per node or per node pair, so the layer is
//! permutation equivariant.

use rand::Rng;

use super::layers::{silu, silu_backward, Film, FilmTrace, LayerNorm, LayerNormTrace, Linear};
use super::params::{Grads, NetworkParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GraphTransformerLayer {
    pub node_dim: usize,
    pub edge_dim: usize,
    q: Linear,
    k: Linear,
    v: Linear,
    edge_mul: Linear,
    edge_add: Linear,
    out_node: Linear,
    out_edge: Linear,
    film_node: Film,
    film_edge: Film,
    ln_node1: LayerNorm,
    ln_edge1: LayerNorm,
    ffn_node1: Linear,
    ffn_node2: Linear,
    ffn_edge1: Linear,
    ffn_edge2: Linear,
    ln_node2: LayerNorm,
    ln_edge2: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct GraphLayerTrace {
    n: usize,
    h: Tensor,
    e: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    m: Tensor,
    y: Tensor,
    attn: Vec<f64>,
    u: Tensor,
    node_att: Tensor,
    edge_att: Tensor,
    film: Option<(FilmTrace, FilmTrace)>,
    ln_node1: LayerNormTrace,
    ln_edge1: LayerNormTrace,
    h1: Tensor,
    e1: Tensor,
    fn1: Tensor,
    fe1: Tensor,
    ln_node2: LayerNormTrace,
    ln_edge2: LayerNormTrace,
}

impl GraphLayerTrace {
    /// Attention weights, row-major `n x n`.
    pub fn attention(&self) -> &[f64] {
        &self.attn
    }
}

impl GraphTransformerLayer {
    pub fn new(
        params: &mut NetworkParams,
        name: &str,
        node_dim: usize,
        edge_dim: usize,
        cond_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = node_dim;
        let de = edge_dim;
        Ok(GraphTransformerLayer {
            node_dim: d,
            edge_dim: de,
            q: Linear::new(params, &format!("{name}.q"), d, d, rng)?,
            k: Linear::new(params, &format!("{name}.k"), d, d, rng)?,
            v: Linear::new(params, &format!("{name}.v"), d, d, rng)?,
            edge_mul: Linear::new(params, &format!("{name}.edge_mul"), de, d, rng)?,
            edge_add: Linear::new(params, &format!("{name}.edge_add"), de, d, rng)?,
            out_node: Linear::new(params, &format!("{name}.out_node"), d, d, rng)?,
            out_edge: Linear::new(params, &format!("{name}.out_edge"), d, de, rng)?,
            film_node: Film::new(params, &format!("{name}.node"), cond_dim, d, rng)?,
            film_edge: Film::new(params, &format!("{name}.edge"), cond_dim, de, rng)?,
            ln_node1: LayerNorm::new(params, &format!("{name}.ln_node1"), d, rng)?,
            ln_edge1: LayerNorm::new(params, &format!("{name}.ln_edge1"), de, rng)?,
            ffn_node1: Linear::new(params, &format!("{name}.ffn_node1"), d, 2 * d, rng)?,
            ffn_node2: Linear::new(params, &format!("{name}.ffn_node2"), 2 * d, d, rng)?,
            ffn_edge1: Linear::new(params, &format!("{name}.ffn_edge1"), de, 2 * de, rng)?,
            ffn_edge2: Linear::new(params, &format!("{name}.ffn_edge2"), 2 * de, de, rng)?,
            ln_node2: LayerNorm::new(params, &format!("{name}.ln_node2"), d, rng)?,
            ln_edge2: LayerNorm::new(params, &format!("{name}.ln_edge2"), de, rng)?,
        })
    }

    /// `cond = None` skips FiLM entirely.
    pub fn forward(
        &self,
        p: &NetworkParams,
        node: &Tensor,
        edge: &Tensor,
        cond: Option<&[f64]>,
    ) -> Result<(Tensor, Tensor, GraphLayerTrace)> {
        let n = node.rows();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "graph transformer needs at least 2 nodes, got {n}"
            )));
        }
        node.check_cols("graph_layer.node", self.node_dim)?;
        edge.check_cols("graph_layer.edge", self.edge_dim)?;
        if edge.rows() != n * n {
            return Err(Error::Shape {
                block: "graph_layer.edge".into(),
                expected: vec![n, n, self.edge_dim],
                actual: edge.shape().to_vec(),
            });
        }
        let d = self.node_dim;
        let scale = 1.0 / (d as f64).sqrt();
        let h = node.clone().reshape(&[n, d])?;
        let e = edge.clone().reshape(&[n * n, self.edge_dim])?;

        let q = self.q.forward(p, &h)?;
        let k = self.k.forward(p, &h)?;
        let v = self.v.forward(p, &h)?;
        let m = self.edge_mul.forward(p, &e)?;
        let a = self.edge_add.forward(p, &e)?;

        let mut y = Tensor::zeros(&[n * n, d]);
        let mut logits = vec![0.0; n * n];
        for i in 0..n {
            let qi = q.row(i);
            for j in 0..n {
                let kj = k.row(j);
                let ij = i * n + j;
                let mij = m.row(ij);
                let aij = a.row(ij);
                let yij = y.row_mut(ij);
                let mut s = 0.0;
                for c in 0..d {
                    yij[c] = qi[c] * kj[c] * scale * (1.0 + mij[c]) + aij[c];
                    s += yij[c];
                }
                logits[ij] = s;
            }
        }
        let mut attn = vec![0.0; n * n];
        for i in 0..n {
            let row = &logits[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..n {
                let w = (row[j] - mx).exp();
                attn[i * n + j] = w;
                z += w;
            }
            for j in 0..n {
                attn[i * n + j] /= z;
            }
        }
        let mut u = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let ui = u.row_mut(i);
            for j in 0..n {
                let w = attn[i * n + j];
                for (o, vv) in ui.iter_mut().zip(v.row(j)) {
                    *o += w * vv;
                }
            }
        }
        let node_att = self.out_node.forward(p, &u)?;
        let edge_att = self.out_edge.forward(p, &y)?;

        let (node_f, edge_f, film) = match cond {
            Some(c) => {
                let (nf, nt) = self.film_node.forward(p, &node_att, c)?;
                let (ef, et) = self.film_edge.forward(p, &edge_att, c)?;
                (nf, ef, Some((nt, et)))
            }
            None => (node_att.clone(), edge_att.clone(), None),
        };

        let (h1, ln_node1) = self.ln_node1.forward(p, &h.add(&node_f))?;
        let (e1, ln_edge1) = self.ln_edge1.forward(p, &e.add(&edge_f))?;

        let fn1 = self.ffn_node1.forward(p, &h1)?;
        let fn2 = self.ffn_node2.forward(p, &silu(&fn1))?;
        let (h2, ln_node2) = self.ln_node2.forward(p, &h1.add(&fn2))?;

        let fe1 = self.ffn_edge1.forward(p, &e1)?;
        let fe2 = self.ffn_edge2.forward(p, &silu(&fe1))?;
        let (e2, ln_edge2) = self.ln_edge2.forward(p, &e1.add(&fe2))?;

        let node_out = h2.reshape(node.shape())?;
        let edge_out = e2.reshape(edge.shape())?;
        let trace = GraphLayerTrace {
            n,
            h,
            e,
            q,
            k,
            v,
            m,
            y,
            attn,
            u,
            node_att,
            edge_att,
            film,
            ln_node1,
            ln_edge1,
            h1,
            e1,
            fn1,
            fe1,
            ln_node2,
            ln_edge2,
        };
        Ok((node_out, edge_out, trace))
    }

    /// Returns gradients with respect to the node and edge inputs.
    pub fn backward(
        &self,
        p: &NetworkParams,
        t: &GraphLayerTrace,
        g_node: &Tensor,
        g_edge: &Tensor,
        grads: &mut Grads,
    ) -> Result<(Tensor, Tensor)> {
        let n = t.n;
        let d = self.node_dim;
        let de = self.edge_dim;
        let scale = 1.0 / (d as f64).sqrt();
        let g_h2 = g_node.clone().reshape(&[n, d])?;
        let g_e2 = g_edge.clone().reshape(&[n * n, de])?;

        // node FFN block
        let g_x2 = self.ln_node2.backward(p, &t.ln_node2, &g_h2, grads);
        let g_act = self.ffn_node2.backward(p, &silu(&t.fn1), &g_x2, grads);
        let g_fn1 = silu_backward(&t.fn1, &g_act);
        let mut g_h1 = self.ffn_node1.backward(p, &t.h1, &g_fn1, grads);
        g_h1.add_assign(&g_x2);

        // edge FFN block
        let g_y2 = self.ln_edge2.backward(p, &t.ln_edge2, &g_e2, grads);
        let g_act = self.ffn_edge2.backward(p, &silu(&t.fe1), &g_y2, grads);
        let g_fe1 = silu_backward(&t.fe1, &g_act);
        let mut g_e1 = self.ffn_edge1.backward(p, &t.e1, &g_fe1, grads);
        g_e1.add_assign(&g_y2);

        let g_x1 = self.ln_node1.backward(p, &t.ln_node1, &g_h1, grads);
        let g_z1 = self.ln_edge1.backward(p, &t.ln_edge1, &g_e1, grads);
        let mut g_h = g_x1.clone();
        let mut g_e = g_z1.clone();

        let (g_node_att, g_edge_att) = match &t.film {
            Some((nt, et)) => (
                self.film_node.backward(p, &t.node_att, nt, &g_x1, grads),
                self.film_edge.backward(p, &t.edge_att, et, &g_z1, grads),
            ),
            None => (g_x1, g_z1),
        };

        let g_u = self.out_node.backward(p, &t.u, &g_node_att, grads);
        let mut g_y = self.out_edge.backward(p, &t.y, &g_edge_att, grads);

        let mut g_v = Tensor::zeros(&[n, d]);
        let mut g_logit = vec![0.0; n * n];
        for i in 0..n {
            let gui = g_u.row(i);
            let mut g_p = vec![0.0; n];
            for j in 0..n {
                g_p[j] = gui.iter().zip(t.v.row(j)).map(|(a, b)| a * b).sum();
                let w = t.attn[i * n + j];
                for (o, gv) in g_v.row_mut(j).iter_mut().zip(gui) {
                    *o += w * gv;
                }
            }
            let dot: f64 = (0..n).map(|j| t.attn[i * n + j] * g_p[j]).sum();
            for j in 0..n {
                g_logit[i * n + j] = t.attn[i * n + j] * (g_p[j] - dot);
            }
        }
        for ij in 0..n * n {
            let gl = g_logit[ij];
            for v in g_y.row_mut(ij) {
                *v += gl;
            }
        }

        let mut g_q = Tensor::zeros(&[n, d]);
        let mut g_k = Tensor::zeros(&[n, d]);
        let mut g_m = Tensor::zeros(&[n * n, d]);
        for i in 0..n {
            for j in 0..n {
                let ij = i * n + j;
                let gy = g_y.row(ij);
                let mij = t.m.row(ij);
                let qi = t.q.row(i).to_vec();
                let kj = t.k.row(j).to_vec();
                {
                    let gm = g_m.row_mut(ij);
                    for c in 0..d {
                        gm[c] = gy[c] * qi[c] * kj[c] * scale;
                    }
                }
                {
                    let gq = g_q.row_mut(i);
                    for c in 0..d {
                        gq[c] += gy[c] * scale * kj[c] * (1.0 + mij[c]);
                    }
                }
                let gk = g_k.row_mut(j);
                for c in 0..d {
                    gk[c] += gy[c] * scale * qi[c] * (1.0 + mij[c]);
                }
            }
        }
        g_h.add_assign(&self.q.backward(p, &t.h, &g_q, grads));
        g_h.add_assign(&self.k.backward(p, &t.h, &g_k, grads));
        g_h.add_assign(&self.v.backward(p, &t.h, &g_v, grads));
        g_e.add_assign(&self.edge_mul.backward(p, &t.e, &g_m, grads));
        g_e.add_assign(&self.edge_add.backward(p, &t.e, &g_y, grads));

        Ok((g_h.reshape(g_node.shape())?, g_e.reshape(g_edge.shape())?))
    }
}
