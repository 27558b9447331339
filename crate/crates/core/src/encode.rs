//! Token-level query encoding and initial node features.
//!
//! Tokens are embedded, mixed by one masked self-attention layer with a
//! residual LayerNorm, then mapped into the node space by `f_s` with a GELU.
//! Nodes start from the mean embedding of their concept-name tokens, mapped
//! by the same `f_s` (no activation), plus a node-type embedding.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::NodeType;
use crate::tensor::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for TokenVocab {
    fn default() -> Self {
        Self::new(std::iter::empty::<&str>())
    }
}

impl TokenVocab {
    /// `<pad>` and `<unk>` take ids 0 and 1; the rest follow in first-seen
    /// order with duplicates skipped.
    pub fn new<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [PAD_TOKEN, UNK_TOKEN] {
            v.insert(t);
        }
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.tokens.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Token ids of a concept name split on `_`. Unknown pieces map to
    /// [`UNK`] with a warning.
    pub fn concept_tokens(&self, name: &str) -> Vec<usize> {
        let ids: Vec<usize> = name
            .split('_')
            .filter(|p| !p.is_empty())
            .map(|p| {
                self.get(p).unwrap_or_else(|| {
                    log::warn!("concept `{name}`: token `{p}` not in vocabulary, using {UNK_TOKEN}");
                    UNK
                })
            })
            .collect();
        if ids.is_empty() {
            vec![UNK]
        } else {
            ids
        }
    }

    /// One token per line. The first two lines must be `<pad>` and `<unk>`.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        if lines.len() < 2 || lines[0] != PAD_TOKEN || lines[1] != UNK_TOKEN {
            return Err(format!("token vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"));
        }
        let v = Self::new(lines[2..].iter().copied());
        if v.len() != lines.len() {
            return Err("duplicate token in vocabulary".into());
        }
        Ok(v)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|message| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message,
        })
    }
}

/// Parameter handles of the encoder, all in [`ParamGroup::Encoder`] except
/// the node-type table which belongs to the graph side.
#[derive(Debug, Clone, Copy)]
pub struct EncoderParams {
    pub embedding: ParamId,
    pub mix_q: ParamId,
    pub mix_k: ParamId,
    pub mix_v: ParamId,
    pub mix_gamma: ParamId,
    pub mix_beta: ParamId,
    pub fs_weight: ParamId,
    pub fs_bias: ParamId,
    pub node_type: ParamId,
    pub token_dim: usize,
    pub dim: usize,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_size: usize,
        token_dim: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let t = token_dim;
        let s = 1.0 / (t as f64).sqrt();
        let enc = ParamGroup::Encoder;
        let mut add = |name: &str, tensor: Tensor, group| store.add(name, tensor, group);
        Ok(Self {
            embedding: add("encoder.embedding", Tensor::random_normal(vec![vocab_size, t], 1.0, rng), enc)?,
            mix_q: add("encoder.mix.q", Tensor::random_normal(vec![t, t], s, rng), enc)?,
            mix_k: add("encoder.mix.k", Tensor::random_normal(vec![t, t], s, rng), enc)?,
            mix_v: add("encoder.mix.v", Tensor::random_normal(vec![t, t], s, rng), enc)?,
            mix_gamma: add("encoder.mix.ln_gamma", Tensor::new(vec![1, t], vec![1.0; t])?, enc)?,
            mix_beta: add("encoder.mix.ln_beta", Tensor::zeros(vec![1, t]), enc)?,
            fs_weight: add("encoder.fs.weight", Tensor::random_normal(vec![t, dim], s, rng), enc)?,
            fs_bias: add("encoder.fs.bias", Tensor::zeros(vec![1, dim]), enc)?,
            node_type: add(
                "graph.node_type",
                Tensor::random_normal(vec![NodeType::COUNT, dim], 1.0 / (dim as f64).sqrt(), rng),
                ParamGroup::Graph,
            )?,
            token_dim,
            dim,
        })
    }
}

/// `true` for padding positions.
pub fn padding_mask(tokens: &[usize]) -> Vec<bool> {
    tokens.iter().map(|&t| t == PAD).collect()
}

/// Truncates to `max_len` with a warning.
pub fn clip_query(tokens: &[usize], max_len: usize) -> &[usize] {
    if tokens.len() > max_len {
        log::warn!("query of {} tokens truncated to {max_len}", tokens.len());
        &tokens[..max_len]
    } else {
        tokens
    }
}

/// Encodes a query into `Q⁰` (`M×D`). With `mixing` off the
/// self-attention layer is skipped and each row depends only on its token.
pub fn encode_query(
    tape: &mut Tape,
    store: &ParamStore,
    p: &EncoderParams,
    tokens: &[usize],
    mixing: bool,
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let pad = padding_mask(tokens);
    if pad.iter().all(|&m| m) {
        return Err(Error::AllPadding);
    }
    let e = tape.gather(store, p.embedding, tokens)?;
    let h = if mixing {
        let m = tokens.len();
        let wq = tape.param(store, p.mix_q);
        let wk = tape.param(store, p.mix_k);
        let wv = tape.param(store, p.mix_v);
        let q = tape.matmul(e, wq)?;
        let k = tape.matmul(e, wk)?;
        let v = tape.matmul(e, wv)?;
        let kt = tape.transpose(k);
        let logits = tape.matmul(q, kt)?;
        let logits = tape.scale(logits, 1.0 / (p.token_dim as f64).sqrt());
        let key_mask: Vec<bool> = (0..m * m).map(|i| pad[i % m]).collect();
        let logits = tape.mask_fill(logits, &key_mask)?;
        let att = tape.softmax(logits, 1)?;
        let mixed = tape.matmul(att, v)?;
        let res = tape.add(e, mixed)?;
        let g = tape.param(store, p.mix_gamma);
        let b = tape.param(store, p.mix_beta);
        tape.layer_norm(res, g, b, LN_EPS)?
    } else {
        e
    };
    let w = tape.param(store, p.fs_weight);
    let b = tape.param(store, p.fs_bias);
    let proj = tape.matmul(h, w)?;
    let proj = tape.add_row(proj, b)?;
    Ok(tape.gelu(proj))
}

/// Mean over unpadded rows of `q` as a `1×D` row.
pub fn masked_mean_rows(tape: &mut Tape, q: Var, pad: &[bool]) -> Result<Var> {
    let live = pad.iter().filter(|&&m| !m).count();
    if live == 0 {
        return Err(Error::AllPadding);
    }
    let w: Vec<f64> = pad
        .iter()
        .map(|&m| if m { 0.0 } else { 1.0 / live as f64 })
        .collect();
    let w = tape.constant(1, pad.len(), w)?;
    Ok(tape.matmul(w, q)?)
}

/// Initial node features `X⁰` (`|V|×D`). `name_tokens[i]` holds the token
/// ids of node `i`'s concept name (ignored for the context node, whose
/// feature is its type embedding plus the detached mean of `q0`).
pub fn init_nodes(
    tape: &mut Tape,
    store: &ParamStore,
    p: &EncoderParams,
    name_tokens: &[Vec<usize>],
    types: &[NodeType],
    q0: Var,
    query_pad: &[bool],
) -> Result<Var> {
    let n = types.len();
    if name_tokens.len() != n {
        return Err(Error::Config(format!(
            "{} name token lists for {n} nodes",
            name_tokens.len()
        )));
    }
    let concept_nodes: Vec<usize> = (0..n).filter(|&i| types[i] != NodeType::Context).collect();
    let ctx_nodes: Vec<usize> = (0..n).filter(|&i| types[i] == NodeType::Context).collect();

    let mut parts = Vec::new();
    if !concept_nodes.is_empty() {
        let mut flat = Vec::new();
        let mut owner = Vec::new();
        let mut inv_len = Vec::with_capacity(concept_nodes.len());
        for (r, &i) in concept_nodes.iter().enumerate() {
            let toks: &[usize] = if name_tokens[i].is_empty() { &[UNK] } else { &name_tokens[i] };
            flat.extend_from_slice(toks);
            owner.extend(std::iter::repeat(r).take(toks.len()));
            inv_len.push(1.0 / toks.len() as f64);
        }
        let emb = tape.gather(store, p.embedding, &flat)?;
        let summed = tape.scatter_add_rows(emb, &owner, concept_nodes.len())?;
        let inv = tape.constant(concept_nodes.len(), 1, inv_len)?;
        let pooled = tape.scale_rows(summed, inv)?;
        let w = tape.param(store, p.fs_weight);
        let b = tape.param(store, p.fs_bias);
        let proj = tape.matmul(pooled, w)?;
        parts.push(tape.add_row(proj, b)?);
    }
    if !ctx_nodes.is_empty() {
        let mean = masked_mean_rows(tape, q0, query_pad)?;
        let mean = tape.detach(mean);
        let rows = vec![0; ctx_nodes.len()];
        parts.push(tape.index_rows(mean, &rows)?);
    }
    let stacked = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 0)? };
    // stacked rows follow concept_nodes then ctx_nodes; put them back in node order
    let mut order = vec![0; n];
    for (r, &i) in concept_nodes.iter().chain(&ctx_nodes).enumerate() {
        order[i] = r;
    }
    let base = if order.iter().enumerate().all(|(i, &r)| i == r) {
        stacked
    } else {
        tape.index_rows(stacked, &order)?
    };
    let type_ids: Vec<usize> = types.iter().map(|t| t.index()).collect();
    let te = tape.gather(store, p.node_type, &type_ids)?;
    Ok(tape.add(base, te)?)
}
