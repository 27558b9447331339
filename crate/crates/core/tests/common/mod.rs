#![allow(dead_code)]

use std::collections::BTreeSet;

use jointlk::encode::{encode_query, init_nodes, EncoderParams, LN_EPS, PAD};
use jointlk::fusion::{affinity, bidirectional_attention, fuse, FusionParams, Masks};
use jointlk::gnn::{gnn_forward, Adjacency, Dropout, GnnLayerParams};
use jointlk::kg::{ConceptId, KnowledgeGraph, NodeType, RelationVocab, SubgraphEdge};
use jointlk::prune::{apply_prune, node_importance_var, top_rank};
use jointlk::tensor::{check_gradients, check_gradients_with, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub const OP_TOL: f64 = 1e-4;
pub const E2E_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_mat(rng: &mut impl Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn tensor_of(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn mat_of(t: &Tensor) -> Mat {
    let (r, _) = t.dims2();
    (0..r).map(|i| t.row(i).to_vec()).collect()
}

pub fn tape_mat(tape: &Tape, v: Var) -> Mat {
    let (_, c) = tape.dims(v);
    tape.value(v).chunks(c).map(|r| r.to_vec()).collect()
}

pub fn param_mat(store: &ParamStore, id: ParamId) -> Mat {
    mat_of(store.get(id))
}

pub fn mm(a: &Mat, b: &Mat) -> Mat {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            assert_eq!(row.len(), inner);
            (0..cols).map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum()).collect()
        })
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    let cols = a.first().map_or(0, Vec::len);
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn layer_norm_row(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let s = (var + LN_EPS).sqrt();
    x.iter().enumerate().map(|(i, v)| (v - mean) / s * g[i] + b[i]).collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "column count");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

/// One relational attention layer computed edge by edge.
pub fn gnn_oracle(store: &ParamStore, p: &GnnLayerParams, x: &Mat, adj: &Adjacency, types: &[NodeType]) -> Mat {
    let n = x.len();
    let d = p.dim;
    let psi = param_mat(store, p.psi);
    let base = p.num_relations + 1;
    let (wq, wk, wv, wo) = (
        param_mat(store, p.w_q),
        param_mat(store, p.w_k),
        param_mat(store, p.w_v),
        param_mat(store, p.w_o),
    );
    let q = mm(x, &wq);
    let k = mm(x, &wk);
    let v = mm(x, &wv);
    let mut incoming: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for e in &adj.edges {
        incoming[e.dst].push((e.src, e.rel));
    }
    if adj.self_loops {
        for (i, inc) in incoming.iter_mut().enumerate() {
            inc.push((i, p.num_relations));
        }
    }
    let g = &param_mat(store, p.ln_gamma)[0];
    let b = &param_mat(store, p.ln_beta)[0];
    (0..n)
        .map(|i| {
            let feats: Vec<Vec<f64>> = incoming[i]
                .iter()
                .map(|&(j, rel)| {
                    (0..d)
                        .map(|c| psi[rel][c] + psi[base + types[j].index()][c] + psi[base + NodeType::COUNT + types[i].index()][c])
                        .collect()
                })
                .collect();
            let logits: Vec<f64> = incoming[i]
                .iter()
                .zip(&feats)
                .map(|(&(j, _), r)| (0..d).map(|c| q[i][c] * (k[j][c] + r[c])).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let alpha = softmax(&logits);
            let mut agg = vec![0.0; d];
            for ((&(j, _), r), a) in incoming[i].iter().zip(&feats).zip(&alpha) {
                for c in 0..d {
                    agg[c] += a * (v[j][c] + r[c]);
                }
            }
            let upd = mm(&vec![agg], &wo).remove(0);
            let res: Vec<f64> = (0..d).map(|c| x[i][c] + upd[c]).collect();
            layer_norm_row(&res, g, b)
        })
        .collect()
}

pub struct FusionOracle {
    pub s: Mat,
    pub kg_to_lm: Mat,
    pub lm_to_kg: Mat,
    pub q_new: Mat,
    pub x_new: Mat,
}

/// Affinity, both attention maps and the fused features, by explicit loops.
pub fn fusion_oracle(store: &ParamStore, p: &FusionParams, q: &Mat, x: &Mat, tok_mask: &[bool], node_mask: &[bool]) -> FusionOracle {
    let (m, n, d) = (q.len(), x.len(), p.dim);
    let ws: Vec<f64> = store.get(p.w_s).values().to_vec();
    let (w1, w2, w3) = (&ws[..d], &ws[d..2 * d], &ws[2 * d..]);
    let s: Mat = (0..m)
        .map(|a| {
            (0..n)
                .map(|b| dot(&q[a], w1) + dot(&x[b], w2) + (0..d).map(|c| q[a][c] * w3[c] * x[b][c]).sum::<f64>())
                .collect()
        })
        .collect();
    let mut k2l = vec![vec![0.0; n]; m];
    for b in 0..n {
        if node_mask[b] {
            continue;
        }
        let live: Vec<usize> = (0..m).filter(|&a| !tok_mask[a]).collect();
        let sm = softmax(&live.iter().map(|&a| s[a][b]).collect::<Vec<_>>());
        for (&a, v) in live.iter().zip(sm) {
            k2l[a][b] = v;
        }
    }
    let mut l2k = vec![vec![0.0; n]; m];
    for a in 0..m {
        if tok_mask[a] {
            continue;
        }
        let live: Vec<usize> = (0..n).filter(|&b| !node_mask[b]).collect();
        let sm = softmax(&live.iter().map(|&b| s[a][b]).collect::<Vec<_>>());
        for (&b, v) in live.iter().zip(sm) {
            l2k[a][b] = v;
        }
    }
    let c = mm(&l2k, x);
    let e = mm(&transpose(&k2l), q);
    let dd = mm(&l2k, &e);
    let f = mm(&transpose(&k2l), &c);
    let cat = |base: &Mat, u: &Mat, w: &Mat| -> Mat {
        base.iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend(&u[i]);
                row.extend((0..d).map(|k| r[k] * u[i][k]));
                row.extend((0..d).map(|k| r[k] * w[i][k]));
                row
            })
            .collect()
    };
    FusionOracle {
        q_new: mm(&cat(q, &c, &dd), &param_mat(store, p.w_q)),
        x_new: mm(&cat(x, &e, &f), &param_mat(store, p.w_x)),
        s,
        kg_to_lm: k2l,
        lm_to_kg: l2k,
    }
}

/// Random KG over `n` concepts named `k0..`, with forward triples drawn
/// from the non-context merged relations.
pub fn random_kg(rng: &mut impl Rng, n: usize, edges: usize) -> KnowledgeGraph {
    let rel = RelationVocab::conceptnet();
    let rels: Vec<usize> = (0..rel.num_merged()).filter(|&r| !rel.is_context(r)).collect();
    let names: Vec<String> = (0..n).map(|i| format!("k{i}")).collect();
    let mut triples = Vec::new();
    while triples.len() < edges.max(1) {
        let h = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        if h != t || n == 1 {
            triples.push((h, rels[rng.gen_range(0..rels.len())], t));
        }
    }
    KnowledgeGraph::from_ids(names, &triples, rel).unwrap()
}

/// Random subgraph-shaped input: entity/bridge nodes plus a final context
/// node linked both ways to every entity.
pub fn random_graph(rng: &mut impl Rng, n: usize, num_relations: usize) -> (Vec<NodeType>, Vec<SubgraphEdge>) {
    let mut types: Vec<NodeType> = (0..n)
        .map(|_| match rng.gen_range(0..3) {
            0 => NodeType::Question,
            1 => NodeType::Answer,
            _ => NodeType::Bridge,
        })
        .collect();
    types.push(NodeType::Context);
    let mut edges = BTreeSet::new();
    for _ in 0..2 * n {
        let s = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        if s != t {
            edges.insert(SubgraphEdge {
                src: s,
                rel: rng.gen_range(0..num_relations),
                dst: t,
            });
        }
    }
    for i in 0..n {
        if types[i].is_entity() {
            edges.insert(SubgraphEdge { src: n, rel: 0, dst: i });
            edges.insert(SubgraphEdge { src: i, rel: 1, dst: n });
        }
    }
    (types, edges.into_iter().collect())
}

pub fn weighted_sum(t: &mut Tape, v: Var, w: &Tensor) -> jointlk::tensor::Result<Var> {
    let w = t.leaf(w);
    let p = t.mul(v, w)?;
    Ok(t.sum(p))
}

/// Central-difference check of every differentiable tape operation in
/// isolation; returns `(op, max relative error)`.
pub fn op_gradchecks() -> Vec<(&'static str, f64)> {
    let mut rng = rng(101);
    let (r, c) = (4, 5);
    let mut out = Vec::new();
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(&mut rng, r, c), ParamGroup::Graph).unwrap();
    let b = store.add("b", random_tensor(&mut rng, r, c), ParamGroup::Graph).unwrap();
    let m = store.add("m", random_tensor(&mut rng, c, 3), ParamGroup::Graph).unwrap();
    let col = store.add("col", random_tensor(&mut rng, r, 1), ParamGroup::Graph).unwrap();
    let row = store.add("row", random_tensor(&mut rng, 1, c), ParamGroup::Graph).unwrap();
    let w_rc = random_tensor(&mut rng, r, c);
    let w_cr = random_tensor(&mut rng, c, r);
    let w_r3 = random_tensor(&mut rng, r, 3);
    let w_r1 = random_tensor(&mut rng, r, 1);
    let w_2rc = random_tensor(&mut rng, 2 * r, c);
    let w_r2c = random_tensor(&mut rng, r, 2 * c);
    let w_2c = random_tensor(&mut rng, 2, c);
    let w_r2 = random_tensor(&mut rng, r, 2);
    let w_6c = random_tensor(&mut rng, 6, c);
    let w_1 = random_tensor(&mut rng, 1, 1);
    let idx = [3, 0, 3, 1, 2, 0];
    let segs: Vec<usize> = (0..r * c).map(|i| (i * 7 + 3) % 4).collect();
    let mask: Vec<bool> = (0..r * c).map(|i| i % c == 2 || i == 0).collect();

    macro_rules! check {
        ($name:expr, |$s:ident, $t:ident| $body:expr) => {{
            let rep = check_gradients(&mut store, None, |$s: &ParamStore, $t: &mut Tape| $body).unwrap();
            out.push(($name, rep.max_rel_error()));
        }};
    }

    check!("matmul", |s, t| {
        let (x, y) = (t.param(s, a), t.param(s, m));
        let p = t.matmul(x, y)?;
        weighted_sum(t, p, &w_r3)
    });
    check!("transpose", |s, t| {
        let x = t.param(s, a);
        let p = t.transpose(x);
        weighted_sum(t, p, &w_cr)
    });
    check!("add", |s, t| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        let p = t.add(x, y)?;
        let p = t.mul(p, p)?;
        weighted_sum(t, p, &w_rc)
    });
    check!("sub", |s, t| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        let p = t.sub(x, y)?;
        let p = t.mul(p, p)?;
        weighted_sum(t, p, &w_rc)
    });
    check!("mul", |s, t| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        let p = t.mul(x, y)?;
        weighted_sum(t, p, &w_rc)
    });
    check!("scale", |s, t| {
        let x = t.param(s, a);
        let p = t.scale(x, -1.7);
        let p = t.mul(p, x)?;
        weighted_sum(t, p, &w_rc)
    });
    check!("add_row", |s, t| {
        let (x, y) = (t.param(s, a), t.param(s, row));
        let p = t.add_row(x, y)?;
        let p = t.mul(p, p)?;
        weighted_sum(t, p, &w_rc)
    });
    check!("scale_rows", |s, t| {
        let (x, y) = (t.param(s, a), t.param(s, col));
        let p = t.scale_rows(x, y)?;
        weighted_sum(t, p, &w_rc)
    });
    check!("scale_cols", |s, t| {
        let (x, y) = (t.param(s, a), t.param(s, row));
        let p = t.scale_cols(x, y)?;
        weighted_sum(t, p, &w_rc)
    });
    check!("row_sum", |s, t| {
        let x = t.param(s, a);
        let p = t.row_sum(x);
        let p = t.mul(p, p)?;
        weighted_sum(t, p, &w_r1)
    });
    check!("sum", |s, t| {
        let x = t.param(s, a);
        let p = t.sum(x);
        let p = t.mul(p, p)?;
        weighted_sum(t, p, &w_1)
    });
    check!("concat_rows", |s, t| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        let p = t.concat(&[x, y], 0)?;
        weighted_sum(t, p, &w_2rc)
    });
    check!("concat_cols", |s, t| {
        let (x, y) = (t.param(s, a), t.param(s, b));
        let p = t.concat(&[x, y], 1)?;
        weighted_sum(t, p, &w_r2c)
    });
    check!("slice_rows", |s, t| {
        let x = t.param(s, a);
        let p = t.slice(x, 0, 1, 2)?;
        weighted_sum(t, p, &w_2c)
    });
    check!("slice_cols", |s, t| {
        let x = t.param(s, a);
        let p = t.slice(x, 1, 2, 2)?;
        weighted_sum(t, p, &w_r2)
    });
    for axis in [0, 1] {
        check!(if axis == 0 { "softmax_cols" } else { "softmax_rows" }, |s, t| {
            let x = t.param(s, a);
            let p = t.softmax(x, axis)?;
            weighted_sum(t, p, &w_rc)
        });
        check!(if axis == 0 { "log_softmax_cols" } else { "log_softmax_rows" }, |s, t| {
            let x = t.param(s, a);
            let p = t.log_softmax(x, axis)?;
            weighted_sum(t, p, &w_rc)
        });
    }
    check!("segment_softmax", |s, t| {
        let x = t.param(s, a);
        let p = t.segment_softmax(x, &segs)?;
        weighted_sum(t, p, &w_rc)
    });
    check!("layer_norm", |s, t| {
        let (x, g, bb) = (t.param(s, a), t.param(s, row), t.param(s, row));
        let p = t.layer_norm(x, g, bb, LN_EPS)?;
        weighted_sum(t, p, &w_rc)
    });
    check!("gelu", |s, t| {
        let x = t.param(s, a);
        let p = t.gelu(x);
        weighted_sum(t, p, &w_rc)
    });
    check!("mask_fill", |s, t| {
        let x = t.param(s, a);
        let p = t.mask_fill(x, &mask)?;
        let p = t.softmax(p, 1)?;
        weighted_sum(t, p, &w_rc)
    });
    check!("gather", |s, t| {
        let p = t.gather(s, a, &idx)?;
        let p = t.mul(p, p)?;
        weighted_sum(t, p, &w_6c)
    });
    check!("index_rows", |s, t| {
        let x = t.param(s, a);
        let p = t.index_rows(x, &idx)?;
        let p = t.mul(p, p)?;
        weighted_sum(t, p, &w_6c)
    });
    check!("scatter_add_rows", |s, t| {
        let x = t.param(s, a);
        let p = t.scatter_add_rows(x, &[2, 0, 2, 1], 3)?;
        let p = t.mul(p, p)?;
        let w = random_tensor(&mut ChaCha8Rng::seed_from_u64(7), 3, c);
        weighted_sum(t, p, &w)
    });
    out
}

/// Finite-difference checks of the composite modules (encoder, node
/// initialization, graph layer, fusion, pruning gate).
pub fn module_gradchecks() -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut g = rng(202);

    // encoder + node initialization
    {
        let mut store = ParamStore::new();
        let p = EncoderParams::init(&mut store, 10, 4, 3, &mut g).unwrap();
        let tokens = [3, 7, PAD, 2, 9];
        let pad: Vec<bool> = tokens.iter().map(|&t| t == PAD).collect();
        // no context node: its feature is a detached copy of the query
        let names = vec![vec![4], vec![5, 6], vec![8]];
        let types = [NodeType::Question, NodeType::Answer, NodeType::Bridge];
        let w1 = random_tensor(&mut g, 5, 3);
        let w2 = random_tensor(&mut g, 3, 3);
        let rep = check_gradients_with(&mut store, None, |s: &ParamStore, t: &mut Tape| {
            let q = encode_query(t, s, &p, &tokens, true)?;
            let x = init_nodes(t, s, &p, &names, &types, q, &pad)?;
            let l1 = weighted_sum(t, q, &w1)?;
            let l2 = weighted_sum(t, x, &w2)?;
            Ok::<_, jointlk::Error>(t.add(l1, l2)?)
        })
        .unwrap();
        out.push(("encoder", rep.max_rel_error()));
    }

    // relational graph attention on 5 nodes
    {
        let mut store = ParamStore::new();
        let p = GnnLayerParams::init(&mut store, "gnn", 38, 4, &mut g).unwrap();
        let x = store.add("x", random_tensor(&mut g, 5, 4), ParamGroup::Graph).unwrap();
        let (types, edges) = random_graph(&mut g, 4, 38);
        let adj = Adjacency::new(5, edges);
        let w = random_tensor(&mut g, 5, 4);
        let rep = check_gradients_with(&mut store, None, |s: &ParamStore, t: &mut Tape| {
            let xv = t.param(s, x);
            let o = gnn_forward(t, s, &p, xv, &adj, &types, None::<&mut Dropout<'_, ChaCha8Rng>>)?;
            Ok::<_, jointlk::Error>(weighted_sum(t, o.x, &w)?)
        })
        .unwrap();
        out.push(("gnn_layer", rep.max_rel_error()));
    }

    // fusion with one padded token
    {
        let mut store = ParamStore::new();
        let p = FusionParams::init(&mut store, "fusion", 3, &mut g).unwrap();
        let q = store.add("q", random_tensor(&mut g, 4, 3), ParamGroup::Encoder).unwrap();
        let x = store.add("x", random_tensor(&mut g, 5, 3), ParamGroup::Graph).unwrap();
        let masks = Masks {
            tokens: vec![false, false, true, false],
            nodes: vec![false; 5],
        };
        let (wq, wx, wa, wb) = (
            random_tensor(&mut g, 4, 3),
            random_tensor(&mut g, 5, 3),
            random_tensor(&mut g, 4, 5),
            random_tensor(&mut g, 4, 5),
        );
        let rep = check_gradients_with(&mut store, None, |s: &ParamStore, t: &mut Tape| {
            let (qv, xv) = (t.param(s, q), t.param(s, x));
            let sm = affinity(t, s, &p, qv, xv)?;
            let att = bidirectional_attention(t, sm, &masks)?;
            let (qn, xn) = fuse(t, s, &p, qv, xv, &att)?;
            let parts = [
                weighted_sum(t, qn, &wq)?,
                weighted_sum(t, xn, &wx)?,
                weighted_sum(t, att.kg_to_lm, &wa)?,
                weighted_sum(t, att.lm_to_kg, &wb)?,
            ];
            let l = t.concat(&parts, 1)?;
            Ok::<_, jointlk::Error>(t.sum(l))
        })
        .unwrap();
        out.push(("fusion", rep.max_rel_error()));
    }

    // pruning gate X^l = X̄[kept] ⊙ Z[kept]
    {
        let mut store = ParamStore::new();
        let sc = store.add("s", random_tensor(&mut g, 3, 6), ParamGroup::Graph).unwrap();
        let xb = store.add("xbar", random_tensor(&mut g, 6, 2), ParamGroup::Graph).unwrap();
        let (types, edges) = random_graph(&mut g, 5, 10);
        let adj = Adjacency::new(6, edges);
        let exempt: BTreeSet<usize> = (0..6).filter(|&i| types[i] == NodeType::Context).collect();
        let mut probe = Tape::new();
        let sv = probe.param(&store, sc);
        let att = probe.softmax(sv, 1).unwrap();
        let z = node_importance_var(&mut probe, att, &[false; 3]).unwrap();
        let kept = top_rank(probe.value(z), 0.6, &exempt).unwrap();
        let w = random_tensor(&mut g, kept.len(), 2);
        let rep = check_gradients_with(&mut store, None, |s: &ParamStore, t: &mut Tape| {
            let sv = t.param(s, sc);
            let att = t.softmax(sv, 1)?;
            let z = node_importance_var(t, att, &[false; 3])?;
            let x = t.param(s, xb);
            let pr = apply_prune(t, x, z, &adj, &kept)?;
            Ok::<_, jointlk::Error>(weighted_sum(t, pr.x, &w)?)
        })
        .unwrap();
        out.push(("prune_gate", rep.max_rel_error()));
    }
    out
}

pub fn names(kg: &KnowledgeGraph, set: &BTreeSet<usize>) -> BTreeSet<String> {
    set.iter().map(|&c| kg.concept_name(c).to_string()).collect()
}

/// Directed edges as (head, rel, tail) triples, by linear scan.
pub fn edge_list(kg: &KnowledgeGraph) -> Vec<(ConceptId, usize, ConceptId)> {
    kg.edges().iter().map(|e| (e.head, e.rel, e.tail)).collect()
}

pub fn linked(edges: &[(ConceptId, usize, ConceptId)], a: ConceptId, b: ConceptId) -> bool {
    edges.iter().any(|&(h, _, t)| (h == a && t == b) || (h == b && t == a))
}

/// Every concept outside the entity set that is the middle of a 2-hop path
/// between two distinct entities.
pub fn oracle_bridges(kg: &KnowledgeGraph, entities: &BTreeSet<ConceptId>) -> BTreeSet<ConceptId> {
    let edges = edge_list(kg);
    let mut out = BTreeSet::new();
    for m in 0..kg.num_concepts() {
        if entities.contains(&m) {
            continue;
        }
        for &a in entities {
            for &b in entities {
                if a != b && linked(&edges, a, m) && linked(&edges, m, b) {
                    out.insert(m);
                }
            }
        }
    }
    out
}

/// Retention ratios as exact fractions.
pub const RATIOS: &[(usize, usize)] = &[(1, 8), (3, 10), (1, 2), (2, 3), (7, 10), (9, 10), (23, 25), (1, 1)];

pub fn oracle_quota(n: usize, (num, den): (usize, usize)) -> usize {
    if n == 0 {
        0
    } else {
        ((num * n).div_ceil(den)).max(1)
    }
}

/// Among all quota-sized subsets of the prunable nodes, the one with the
/// largest total importance; ties go to the lexicographically smallest.
pub fn oracle_kept(z: &[f64], ratio: (usize, usize), exempt: &BTreeSet<usize>) -> Vec<usize> {
    let prunable: Vec<usize> = (0..z.len()).filter(|i| !exempt.contains(i)).collect();
    let quota = oracle_quota(prunable.len(), ratio);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for bits in 0u32..(1 << prunable.len()) {
        if bits.count_ones() as usize != quota {
            continue;
        }
        let set: Vec<usize> = (0..prunable.len()).filter(|b| bits >> b & 1 == 1).map(|b| prunable[b]).collect();
        let total: f64 = set.iter().map(|&i| z[i]).sum();
        let better = match &best {
            None => true,
            Some((t, s)) => total > *t || (total == *t && set < *s),
        };
        if better {
            best = Some((total, set));
        }
    }
    let mut kept = best.map(|b| b.1).unwrap_or_default();
    kept.extend(exempt.iter().copied());
    kept.sort_unstable();
    kept
}
