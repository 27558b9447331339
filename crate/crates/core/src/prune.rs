//! Attention-guided node pruning.
//!
//! Node importance `Z` is the LM-to-KG attention averaged over unmasked
//! tokens. Each layer keeps the top `⌈K·|V_prunable|⌉` prunable nodes by `Z`
//! (exempt nodes always stay), gates kept rows by their `Z`, and restricts the
//! adjacency to kept endpoints.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::Adjacency;
use crate::kg::SubgraphEdge;
use crate::tensor::{Tape, TensorError, Var};

/// Absorbs float error in `K·n` before the ceiling (`0.92·100` is
/// `92.00000000000001`).
const CEIL_SLACK: f64 = 1e-9;

/// Number of prunable nodes kept: `⌈K·n⌉`, at least 1 when `n > 0`.
pub fn retention_quota(n: usize, k: f64) -> Result<usize> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(Error::BadRetention(k));
    }
    if n == 0 {
        return Ok(0);
    }
    let q = ((k * n as f64) - CEIL_SLACK).ceil() as usize;
    if q == 0 {
        log::warn!("retention quota rounded to 0 for {n} nodes at K={k}; keeping 1");
    }
    Ok(q.clamp(1, n))
}

/// Column means of an `m×n` row-major attention matrix over unmasked rows.
pub fn node_importance(lm_to_kg: &[f64], m: usize, n: usize, token_mask: &[bool]) -> Result<Vec<f64>> {
    if lm_to_kg.len() != m * n || token_mask.len() != m {
        return Err(TensorError::ShapeMismatch {
            op: "node_importance",
            left: vec![m, n],
            right: vec![lm_to_kg.len(), token_mask.len()],
        }
        .into());
    }
    let live = token_mask.iter().filter(|&&b| !b).count();
    if live == 0 {
        return Err(Error::AllPadding);
    }
    let mut z = vec![0.0; n];
    for i in (0..m).filter(|&i| !token_mask[i]) {
        for j in 0..n {
            z[j] += lm_to_kg[i * n + j];
        }
    }
    z.iter_mut().for_each(|v| *v /= live as f64);
    Ok(z)
}

/// The same mean as [`node_importance`], recorded on the tape as a `1×n` row.
pub fn node_importance_var(tape: &mut Tape, lm_to_kg: Var, token_mask: &[bool]) -> Result<Var> {
    let (m, _) = tape.dims(lm_to_kg);
    let live = token_mask.iter().filter(|&&b| !b).count();
    if token_mask.len() != m {
        return Err(TensorError::ShapeMismatch {
            op: "node_importance",
            left: vec![m],
            right: vec![token_mask.len()],
        }
        .into());
    }
    if live == 0 {
        return Err(Error::AllPadding);
    }
    let w: Vec<f64> = token_mask
        .iter()
        .map(|&b| if b { 0.0 } else { 1.0 / live as f64 })
        .collect();
    let w = tape.constant(1, m, w)?;
    Ok(tape.matmul(w, lm_to_kg)?)
}

/// Kept indices, sorted: every exempt index plus the quota of prunable
/// indices with the largest `z` (ties to the lower index).
pub fn top_rank(z: &[f64], k: f64, exempt: &BTreeSet<usize>) -> Result<Vec<usize>> {
    let mut prunable: Vec<usize> = (0..z.len()).filter(|i| !exempt.contains(i)).collect();
    let quota = retention_quota(prunable.len(), k)?;
    prunable.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = prunable[..quota]
        .iter()
        .copied()
        .chain(exempt.iter().copied().filter(|&i| i < z.len()))
        .collect();
    kept.sort_unstable();
    Ok(kept)
}

/// Edges with both endpoints kept, relabelled to positions in `kept`,
/// together with the old-to-new map.
pub fn restrict_adjacency(adj: &Adjacency, kept: &[usize]) -> Result<(Adjacency, Vec<Option<usize>>)> {
    let mut map = vec![None; adj.num_nodes];
    for (new, &old) in kept.iter().enumerate() {
        if old >= adj.num_nodes {
            return Err(TensorError::OutOfRange {
                what: "kept node",
                index: old,
                size: adj.num_nodes,
            }
            .into());
        }
        map[old] = Some(new);
    }
    let edges = adj
        .edges
        .iter()
        .filter_map(|e| match (map[e.src], map[e.dst]) {
            (Some(src), Some(dst)) => Some(SubgraphEdge { src, rel: e.rel, dst }),
            _ => None,
        })
        .collect();
    Ok((
        Adjacency {
            num_nodes: kept.len(),
            edges,
            self_loops: adj.self_loops,
        },
        map,
    ))
}

pub struct PruneResult {
    pub kept: Vec<usize>,
    /// `|kept|×D`, row `r` is `X̄[kept[r]]·Z[kept[r]]`.
    pub x: Var,
    pub adjacency: Adjacency,
    pub old_to_new: Vec<Option<usize>>,
}

/// Gates kept rows of `x_bar` by `z` (a `1×|V|` tape row) and restricts
/// the adjacency.
pub fn apply_prune(tape: &mut Tape, x_bar: Var, z: Var, adj: &Adjacency, kept: &[usize]) -> Result<PruneResult> {
    let zt = tape.transpose(z);
    let zk = tape.index_rows(zt, kept)?;
    let rows = tape.index_rows(x_bar, kept)?;
    let x = tape.scale_rows(rows, zk)?;
    let (adjacency, old_to_new) = restrict_adjacency(adj, kept)?;
    Ok(PruneResult {
        kept: kept.to_vec(),
        x,
        adjacency,
        old_to_new,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceNode {
    /// Position in the retrieved subgraph.
    pub node: usize,
    pub concept: String,
    pub z: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLayer {
    pub layer: usize,
    pub nodes: Vec<TraceNode>,
}

impl TraceLayer {
    pub fn kept(&self) -> impl Iterator<Item = &TraceNode> {
        self.nodes.iter().filter(|n| n.kept)
    }
}

/// Per-layer record of node importance and pruning decisions. Layer `l`
/// lists exactly the nodes kept by layer `l−1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneTrace {
    pub layers: Vec<TraceLayer>,
}

impl PruneTrace {
    /// Records one layer. `universe[i]` is the subgraph position of current
    /// node `i`.
    pub fn record(&mut self, universe: &[usize], names: &[String], z: &[f64], kept: &[usize]) {
        let kept: BTreeSet<usize> = kept.iter().copied().collect();
        let layer = self.layers.len() + 1;
        self.layers.push(TraceLayer {
            layer,
            nodes: universe
                .iter()
                .enumerate()
                .map(|(i, &node)| TraceNode {
                    node,
                    concept: names[node].clone(),
                    z: z[i],
                    kept: kept.contains(&i),
                })
                .collect(),
        });
    }

    pub fn kept_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.kept().count()).collect()
    }

    /// Subgraph positions surviving the final layer.
    pub fn survivors(&self) -> Vec<usize> {
        self.layers
            .last()
            .map(|l| l.kept().map(|n| n.node).collect())
            .unwrap_or_default()
    }

    /// Checks that each layer's universe is the previous layer's kept set.
    pub fn is_chained(&self) -> bool {
        self.layers.windows(2).all(|w| {
            let prev: Vec<usize> = w[0].kept().map(|n| n.node).collect();
            let next: Vec<usize> = w[1].nodes.iter().map(|n| n.node).collect();
            prev == next
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace is plain data")
    }

    /// DOT graph of one layer: kept nodes solid, pruned nodes dashed. Edges
    /// are those of `edges` (subgraph positions) among the layer's nodes.
    pub fn to_dot(&self, layer: usize, edges: &[SubgraphEdge], relation_name: impl Fn(usize) -> String) -> String {
        let l = &self.layers[layer];
        let mut s = String::new();
        let _ = writeln!(s, "digraph layer{} {{", l.layer);
        let _ = writeln!(s, "  label=\"layer {}\";", l.layer);
        let present: BTreeSet<usize> = l.nodes.iter().map(|n| n.node).collect();
        for n in &l.nodes {
            let _ = writeln!(
                s,
                "  n{} [label=\"{}\\nz={:.4}\", style={}];",
                n.node,
                n.concept.replace('"', "\\\""),
                n.z,
                if n.kept { "solid" } else { "dashed" }
            );
        }
        for e in edges.iter().filter(|e| present.contains(&e.src) && present.contains(&e.dst)) {
            let _ = writeln!(s, "  n{} -> n{} [label=\"{}\"];", e.src, e.dst, relation_name(e.rel));
        }
        s.push_str("}\n");
        s
    }
}
