//! Relation-aware graph attention layer.
//!
//! For each directed edge `j → i` with relation `e` and endpoint types
//! `u_j, u_i`, the relation feature is `r = ψ(e, u_j, u_i)`. Node `i` attends
//! over incoming edges (and a self-loop) with scores
//! `(x_i W_q)·(x_j W_k + r) / √D`, aggregates `(x_j W_v + r)` and returns
//! `LayerNorm(x_i + dropout(x̂_i W_o))`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{NodeType, SubgraphEdge};
use crate::tensor::{ParamGroup, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

/// Edge list over `num_nodes` nodes. Self-loops are not stored; the layer
/// adds them when `self_loops` is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    pub num_nodes: usize,
    pub edges: Vec<SubgraphEdge>,
    pub self_loops: bool,
}

impl Adjacency {
    pub fn new(num_nodes: usize, edges: Vec<SubgraphEdge>) -> Self {
        Self {
            num_nodes,
            edges,
            self_loops: true,
        }
    }

    /// `(source, relation)` pairs feeding node `i`, self-loop excluded.
    pub fn incoming(&self, i: usize) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .filter(|e| e.dst == i)
            .map(|e| (e.src, e.rel))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GnnLayerParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
    /// Rows: relations, then the reserved self-loop relation, then
    /// source-type and target-type one-hot slots.
    pub psi: ParamId,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    pub num_relations: usize,
    pub dim: usize,
}

impl GnnLayerParams {
    /// `num_relations` excludes the self-loop relation, which gets id
    /// `num_relations`.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        num_relations: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let s = 1.0 / (dim as f64).sqrt();
        let g = ParamGroup::Graph;
        let mut mat = |name: &str, rows: usize, std: f64, rng: &mut R| {
            store.add(&format!("{prefix}.{name}"), Tensor::random_normal(vec![rows, dim], std, rng), g)
        };
        let w_q = mat("w_q", dim, s, rng)?;
        let w_k = mat("w_k", dim, s, rng)?;
        let w_v = mat("w_v", dim, s, rng)?;
        let w_o = mat("w_o", dim, s, rng)?;
        let psi = mat("psi", num_relations + 1 + 2 * NodeType::COUNT, s, rng)?;
        let ln_gamma = store.add(&format!("{prefix}.ln_gamma"), Tensor::new(vec![1, dim], vec![1.0; dim])?, g)?;
        let ln_beta = store.add(&format!("{prefix}.ln_beta"), Tensor::zeros(vec![1, dim]), g)?;
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o,
            psi,
            ln_gamma,
            ln_beta,
            num_relations,
            dim,
        })
    }

    pub fn self_loop_relation(&self) -> usize {
        self.num_relations
    }

    /// ψ rows summed for each `(relation, source type, target type)`; the
    /// linear map of the concatenated one-hots.
    pub fn relation_features(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        triples: &[(usize, NodeType, NodeType)],
    ) -> Result<Var> {
        let base = self.num_relations + 1;
        let mut rel = Vec::with_capacity(triples.len());
        let mut src = Vec::with_capacity(triples.len());
        let mut dst = Vec::with_capacity(triples.len());
        for &(r, uj, ui) in triples {
            if r >= base {
                return Err(TensorError::OutOfRange {
                    what: "relation id",
                    index: r,
                    size: base,
                }
                .into());
            }
            rel.push(r);
            src.push(base + uj.index());
            dst.push(base + NodeType::COUNT + ui.index());
        }
        let a = tape.gather(store, self.psi, &rel)?;
        let b = tape.gather(store, self.psi, &src)?;
        let c = tape.gather(store, self.psi, &dst)?;
        let ab = tape.add(a, b)?;
        Ok(tape.add(ab, c)?)
    }
}

/// Train-mode dropout: a fixed inverted-scaling mask applied by product.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, d: Option<&mut Dropout<'_, R>>) -> Result<Var> {
    let Some(d) = d else { return Ok(x) };
    if d.rate <= 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.dims(x);
    let keep = 1.0 / (1.0 - d.rate);
    let mask: Vec<f64> = (0..r * c)
        .map(|_| if d.rng.gen::<f64>() < d.rate { 0.0 } else { keep })
        .collect();
    let m = tape.constant(r, c, mask)?;
    Ok(tape.mul(x, m)?)
}

pub struct GnnOutput {
    pub x: Var,
    /// Attention weight per edge, `E×1`, aligned with `src`/`dst`.
    pub alpha: Var,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

pub fn gnn_forward<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    p: &GnnLayerParams,
    x: Var,
    adj: &Adjacency,
    types: &[NodeType],
    drop: Option<&mut Dropout<'_, R>>,
) -> Result<GnnOutput> {
    let n = adj.num_nodes;
    if tape.dims(x).0 != n || types.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "gnn_forward",
            left: vec![tape.dims(x).0, types.len()],
            right: vec![n],
        }
        .into());
    }
    let mut src = Vec::with_capacity(adj.edges.len() + n);
    let mut dst = Vec::with_capacity(adj.edges.len() + n);
    let mut triples = Vec::with_capacity(adj.edges.len() + n);
    let mut has_incoming = vec![false; n];
    for e in &adj.edges {
        if e.src >= n || e.dst >= n {
            return Err(TensorError::OutOfRange {
                what: "adjacency node",
                index: e.src.max(e.dst),
                size: n,
            }
            .into());
        }
        src.push(e.src);
        dst.push(e.dst);
        triples.push((e.rel, types[e.src], types[e.dst]));
        has_incoming[e.dst] = true;
    }
    if adj.self_loops {
        for i in 0..n {
            src.push(i);
            dst.push(i);
            triples.push((p.self_loop_relation(), types[i], types[i]));
        }
    } else if let Some(i) = has_incoming.iter().position(|&h| !h) {
        return Err(Error::NoNeighbors(i));
    }

    let wq = tape.param(store, p.w_q);
    let wk = tape.param(store, p.w_k);
    let wv = tape.param(store, p.w_v);
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let r = p.relation_features(tape, store, &triples)?;

    let qi = tape.index_rows(q, &dst)?;
    let kj = tape.index_rows(k, &src)?;
    let kj = tape.add(kj, r)?;
    let prod = tape.mul(qi, kj)?;
    let logits = tape.row_sum(prod);
    let logits = tape.scale(logits, 1.0 / (p.dim as f64).sqrt());
    let alpha = tape.segment_softmax(logits, &dst)?;

    let vj = tape.index_rows(v, &src)?;
    let vj = tape.add(vj, r)?;
    let msg = tape.scale_rows(vj, alpha)?;
    let agg = tape.scatter_add_rows(msg, &dst, n)?;
    let wo = tape.param(store, p.w_o);
    let upd = tape.matmul(agg, wo)?;
    let upd = dropout(tape, upd, drop)?;
    let res = tape.add(x, upd)?;
    let g = tape.param(store, p.ln_gamma);
    let b = tape.param(store, p.ln_beta);
    let out = tape.layer_norm(res, g, b, crate::encode::LN_EPS)?;
    Ok(GnnOutput {
        x: out,
        alpha,
        src,
        dst,
    })
}
