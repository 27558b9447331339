//! Dense bidirectional attention between query tokens and graph nodes.
//!
//! `S[i][j] = w_Sᵀ [q_i; x_j; q_i ∘ x_j]`. Normalizing `S` over tokens gives
//! the KG-to-LM map (each column a distribution over tokens); normalizing
//! over nodes gives the LM-to-KG map (each row a distribution over nodes).
//! Both modalities are then updated from four-slot concatenations of their
//! own features, the attended context and second-order summaries.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{ParamGroup, ParamId, ParamStore, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct FusionParams {
    /// `3D×1`: token, node and product weights stacked.
    pub w_s: ParamId,
    /// `4D×D`, applied on the right.
    pub w_q: ParamId,
    /// `4D×D`, applied on the right.
    pub w_x: ParamId,
    pub dim: usize,
}

impl FusionParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let g = ParamGroup::Graph;
        let s3 = 1.0 / (3.0 * dim as f64).sqrt();
        let s4 = 1.0 / (4.0 * dim as f64).sqrt();
        Ok(Self {
            w_s: store.add(&format!("{prefix}.w_s"), Tensor::random_normal(vec![3 * dim, 1], s3, rng), g)?,
            w_q: store.add(&format!("{prefix}.w_q"), Tensor::random_normal(vec![4 * dim, dim], s4, rng), g)?,
            w_x: store.add(&format!("{prefix}.w_x"), Tensor::random_normal(vec![4 * dim, dim], s4, rng), g)?,
            dim,
        })
    }
}

/// Positions excluded from attention (`true` = masked).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Masks {
    pub tokens: Vec<bool>,
    pub nodes: Vec<bool>,
}

impl Masks {
    pub fn none(m: usize, n: usize) -> Self {
        Self {
            tokens: vec![false; m],
            nodes: vec![false; n],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionPair {
    /// `M×|V|`, columns sum to 1 over unmasked tokens.
    pub kg_to_lm: Var,
    /// `M×|V|`, rows sum to 1 over unmasked nodes; masked token rows are 0.
    pub lm_to_kg: Var,
}

/// Affinity matrix `S` (`M×|V|`) without masking.
pub fn affinity(tape: &mut Tape, store: &ParamStore, p: &FusionParams, q: Var, x: Var) -> Result<Var> {
    let (m, dq) = tape.dims(q);
    let (n, dx) = tape.dims(x);
    if dq != dx || dq != p.dim {
        return Err(TensorError::ShapeMismatch {
            op: "affinity",
            left: vec![m, dq],
            right: vec![n, dx],
        }
        .into());
    }
    let d = p.dim;
    let ws = tape.param(store, p.w_s);
    let w1 = tape.slice(ws, 0, 0, d)?;
    let w2 = tape.slice(ws, 0, d, d)?;
    let w3 = tape.slice(ws, 0, 2 * d, d)?;
    let a = tape.matmul(q, w1)?; // M×1
    let b = tape.matmul(x, w2)?; // n×1
    let ones_n = tape.constant(1, n, vec![1.0; n])?;
    let ones_m = tape.constant(m, 1, vec![1.0; m])?;
    let t1 = tape.matmul(a, ones_n)?;
    let bt = tape.transpose(b);
    let t2 = tape.matmul(ones_m, bt)?;
    let w3t = tape.transpose(w3);
    let qw = tape.scale_cols(q, w3t)?;
    let xt = tape.transpose(x);
    let t3 = tape.matmul(qw, xt)?;
    let s = tape.add(t1, t2)?;
    Ok(tape.add(s, t3)?)
}

/// Both attention maps from `S`. A fully masked token or node axis is
/// rejected.
pub fn bidirectional_attention(tape: &mut Tape, s: Var, masks: &Masks) -> Result<AttentionPair> {
    let (m, n) = tape.dims(s);
    if masks.tokens.len() != m || masks.nodes.len() != n {
        return Err(TensorError::ShapeMismatch {
            op: "bidirectional_attention",
            left: vec![m, n],
            right: vec![masks.tokens.len(), masks.nodes.len()],
        }
        .into());
    }
    if masks.tokens.iter().all(|&b| b) {
        return Err(TensorError::FullyMasked {
            op: "kg_to_lm",
            slice: 0,
        }
        .into());
    }
    if masks.nodes.iter().all(|&b| b) {
        return Err(TensorError::FullyMasked {
            op: "lm_to_kg",
            slice: 0,
        }
        .into());
    }
    let any_tok = masks.tokens.iter().any(|&b| b);
    let any_node = masks.nodes.iter().any(|&b| b);

    let by_token = if any_tok {
        let tok_only: Vec<bool> = (0..m * n).map(|i| masks.tokens[i / n]).collect();
        tape.mask_fill(s, &tok_only)?
    } else {
        s
    };
    let mut kg_to_lm = tape.softmax(by_token, 0)?;
    if any_node {
        let keep: Vec<f64> = masks.nodes.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
        let keep = tape.constant(1, n, keep)?;
        kg_to_lm = tape.scale_cols(kg_to_lm, keep)?;
    }

    let by_node = if any_node {
        let node_only: Vec<bool> = (0..m * n).map(|i| masks.nodes[i % n]).collect();
        tape.mask_fill(s, &node_only)?
    } else {
        s
    };
    let mut lm_to_kg = tape.softmax(by_node, 1)?;
    if any_tok {
        let keep: Vec<f64> = masks.tokens.iter().map(|&b| if b { 0.0 } else { 1.0 }).collect();
        let keep = tape.constant(m, 1, keep)?;
        lm_to_kg = tape.scale_rows(lm_to_kg, keep)?;
    }
    Ok(AttentionPair { kg_to_lm, lm_to_kg })
}

/// Updated token features `Q^l` (`M×D`) and node features `X̄^l` (`|V|×D`).
pub fn fuse(
    tape: &mut Tape,
    store: &ParamStore,
    p: &FusionParams,
    q: Var,
    x: Var,
    att: &AttentionPair,
) -> Result<(Var, Var)> {
    let (m, n) = tape.dims(att.lm_to_kg);
    if tape.dims(q).0 != m || tape.dims(x).0 != n || tape.dims(q).1 != p.dim || tape.dims(x).1 != p.dim {
        return Err(TensorError::ShapeMismatch {
            op: "fuse",
            left: vec![tape.dims(q).0, tape.dims(x).0, tape.dims(q).1],
            right: vec![m, n, p.dim],
        }
        .into());
    }
    let k2l_t = tape.transpose(att.kg_to_lm);
    let c = tape.matmul(att.lm_to_kg, x)?;
    let e = tape.matmul(k2l_t, q)?;
    let d = tape.matmul(att.lm_to_kg, e)?;
    let f = tape.matmul(k2l_t, c)?;

    let qc = tape.mul(q, c)?;
    let qd = tape.mul(q, d)?;
    let q_cat = tape.concat(&[q, c, qc, qd], 1)?;
    let wq = tape.param(store, p.w_q);
    let q_new = tape.matmul(q_cat, wq)?;

    let xe = tape.mul(x, e)?;
    let xf = tape.mul(x, f)?;
    let x_cat = tape.concat(&[x, e, xe, xf], 1)?;
    let wx = tape.param(store, p.w_x);
    let x_new = tape.matmul(x_cat, wx)?;
    Ok((q_new, x_new))
}
