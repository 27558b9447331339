use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encode::{clip_query, encode_query, init_nodes, masked_mean_rows, padding_mask, EncoderParams, TokenVocab};
use crate::error::{Error, Result};
use crate::fusion::{affinity, bidirectional_attention, fuse, FusionParams, Masks};
use crate::gnn::{gnn_forward, Adjacency, Dropout, GnnLayerParams};
use crate::kg::{NodeType, Subgraph, SubgraphEdge};
use crate::prune::{apply_prune, node_importance_var, top_rank, PruneTrace};
use crate::tensor::{ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};

use super::JointLKConfig;

/// One (question, choice) pair ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphQuery {
    pub tokens: Vec<usize>,
    pub node_tokens: Vec<Vec<usize>>,
    pub node_types: Vec<NodeType>,
    pub node_names: Vec<String>,
    pub edges: Vec<SubgraphEdge>,
}

impl GraphQuery {
    pub fn from_subgraph(tokens: Vec<usize>, sub: &Subgraph, vocab: &TokenVocab) -> Self {
        Self {
            tokens,
            node_tokens: sub
                .nodes
                .iter()
                .map(|n| match n.node_type {
                    NodeType::Context => Vec::new(),
                    _ => vocab.concept_tokens(&n.name),
                })
                .collect(),
            node_types: sub.node_types(),
            node_names: sub.nodes.iter().map(|n| n.name.clone()).collect(),
            edges: sub.edges.clone(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuestion {
    pub id: String,
    pub choices: Vec<GraphQuery>,
    pub gold: usize,
    /// `|V_q|`, used for the evaluation breakdown.
    pub question_entities: usize,
}

#[derive(Debug, Clone, Copy)]
struct LayerParams {
    gnn: GnnLayerParams,
    fusion: Option<FusionParams>,
}

#[derive(Debug, Clone, Copy)]
struct HeadParams {
    w_pool: Option<ParamId>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Per-question softmax over choice scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceScore {
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub prediction: usize,
}

pub struct Forward {
    pub score: Var,
    /// Final token representations `Q^N`.
    pub tokens: Var,
    /// Final node representations `X^N`, absent for the graph-free baseline.
    pub nodes: Option<Var>,
}

/// The full stack: encoder, `N` layers of graph attention, fusion and
/// pruning, and the scoring head.
pub struct JointLK {
    pub config: JointLKConfig,
    pub store: ParamStore,
    encoder: EncoderParams,
    layers: Vec<LayerParams>,
    head: HeadParams,
}

impl JointLK {
    /// `num_relations` counts KG relation ids including reverses.
    pub fn new(config: JointLKConfig, vocab_size: usize, num_relations: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.dim;
        let encoder = EncoderParams::init(&mut store, vocab_size, config.token_dim(), d, &mut rng)?;
        let mut layers = Vec::new();
        if !config.no_kg {
            for l in 0..config.layers {
                let gnn = GnnLayerParams::init(&mut store, &format!("layer{l}.gnn"), num_relations, d, &mut rng)?;
                let fusion = if config.fusion_enabled() {
                    Some(FusionParams::init(&mut store, &format!("layer{l}.fusion"), d, &mut rng)?)
                } else {
                    None
                };
                layers.push(LayerParams { gnn, fusion });
            }
        }
        let g = ParamGroup::Graph;
        let s = 1.0 / (d as f64).sqrt();
        let w_pool = if config.no_kg {
            None
        } else {
            Some(store.add("head.w_pool", Tensor::random_normal(vec![d, d], s, &mut rng), g)?)
        };
        let input = if config.no_kg { d } else { 2 * d };
        let head = HeadParams {
            w_pool,
            w1: store.add(
                "head.w1",
                Tensor::random_normal(vec![input, d], 1.0 / (input as f64).sqrt(), &mut rng),
                g,
            )?,
            b1: store.add("head.b1", Tensor::zeros(vec![1, d]), g)?,
            w2: store.add("head.w2", Tensor::random_normal(vec![d, 1], s, &mut rng), g)?,
            b2: store.add("head.b2", Tensor::zeros(vec![1, 1]), g)?,
        };
        Ok(Self {
            config,
            store,
            encoder,
            layers,
            head,
        })
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.encoder
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Plausibility score (`1×1`) of one (question, choice) pair, read from
    /// `store` (normally `self.store`; gradient checks pass a perturbed copy).
    /// `rng` enables train-mode dropout. `trace` records pruning decisions.
    pub fn forward_with(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        input: &GraphQuery,
        rng: Option<&mut dyn RngCore>,
        mut trace: Option<&mut PruneTrace>,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let tokens = clip_query(&input.tokens, cfg.max_seq_len);
        let pad = padding_mask(tokens);
        let mut q = encode_query(tape, store, &self.encoder, tokens, cfg.mixing)?;

        if cfg.no_kg {
            let s = masked_mean_rows(tape, q, &pad)?;
            let score = self.mlp(tape, store, s)?;
            return Ok(Forward {
                score,
                tokens: q,
                nodes: None,
            });
        }

        let n = input.num_nodes();
        if input.node_types.iter().filter(|t| **t != NodeType::Context).count() == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut x = init_nodes(tape, store, &self.encoder, &input.node_tokens, &input.node_types, q, &pad)?;
        let mut adj = Adjacency::new(n, input.edges.clone());
        let mut types = input.node_types.clone();
        let mut universe: Vec<usize> = (0..n).collect();
        let mut drop = rng.map(|rng| Dropout {
            rate: cfg.dropout,
            rng,
        });

        for layer in &self.layers {
            let out = gnn_forward(tape, store, &layer.gnn, x, &adj, &types, drop.as_mut())?;
            let Some(fp) = &layer.fusion else {
                x = out.x;
                continue;
            };
            let s = affinity(tape, store, fp, q, out.x)?;
            let masks = Masks {
                tokens: pad.clone(),
                nodes: vec![false; types.len()],
            };
            let att = bidirectional_attention(tape, s, &masks)?;
            let (q_next, x_bar) = fuse(tape, store, fp, q, out.x, &att)?;
            q = q_next;
            let z = node_importance_var(tape, att.lm_to_kg, &pad)?;
            if !cfg.pruning_enabled() {
                if let Some(t) = trace.as_deref_mut() {
                    let all: Vec<usize> = (0..types.len()).collect();
                    t.record(&universe, &input.node_names, tape.value(z), &all);
                }
                x = x_bar;
                continue;
            }
            let exempt: BTreeSet<usize> = (0..types.len()).filter(|&i| types[i] == NodeType::Context).collect();
            let kept = top_rank(tape.value(z), cfg.retention, &exempt)?;
            if let Some(t) = trace.as_deref_mut() {
                t.record(&universe, &input.node_names, tape.value(z), &kept);
            }
            let pr = apply_prune(tape, x_bar, z, &adj, &kept)?;
            universe = kept.iter().map(|&i| universe[i]).collect();
            types = kept.iter().map(|&i| types[i]).collect();
            adj = pr.adjacency;
            x = pr.x;
        }

        let s = masked_mean_rows(tape, q, &pad)?;
        let w_pool = tape.param(store, self.head.w_pool.expect("graph head"));
        let key = tape.matmul(s, w_pool)?;
        let xt = tape.transpose(x);
        let logits = tape.matmul(key, xt)?;
        let beta = tape.softmax(logits, 1)?;
        let g = tape.matmul(beta, x)?;
        let sg = tape.concat(&[s, g], 1)?;
        let score = self.mlp(tape, store, sg)?;
        Ok(Forward {
            score,
            tokens: q,
            nodes: Some(x),
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        input: &GraphQuery,
        rng: Option<&mut dyn RngCore>,
        trace: Option<&mut PruneTrace>,
    ) -> Result<Forward> {
        self.forward_with(&self.store, tape, input, rng, trace)
    }

    fn mlp(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        let w1 = tape.param(store, self.head.w1);
        let b1 = tape.param(store, self.head.b1);
        let w2 = tape.param(store, self.head.w2);
        let b2 = tape.param(store, self.head.b2);
        let h = tape.matmul(input, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.gelu(h);
        let o = tape.matmul(h, w2)?;
        Ok(tape.add(o, b2)?)
    }

    /// Scores of every choice as a `1×C` row on `tape`.
    pub fn choice_scores(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        choices: &[GraphQuery],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        if choices.len() < 2 {
            return Err(Error::TooFewChoices(choices.len()));
        }
        let mut scores = Vec::with_capacity(choices.len());
        for c in choices {
            let r: Option<&mut dyn RngCore> = match rng.as_mut() {
                Some(r) => Some(&mut **r),
                None => None,
            };
            scores.push(self.forward_with(store, tape, c, r, None)?.score);
        }
        Ok(tape.concat(&scores, 1)?)
    }

    /// Cross-entropy of the gold choice (`1×1`).
    pub fn question_loss(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        question: &PreparedQuestion,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<(Var, Var)> {
        let scores = self.choice_scores(store, tape, &question.choices, rng)?;
        let logp = tape.log_softmax(scores, 1)?;
        let picked = tape.slice(logp, 1, question.gold, 1)?;
        Ok((tape.scale(picked, -1.0), scores))
    }

    pub fn predict(&self, choices: &[GraphQuery]) -> Result<ChoiceScore> {
        let mut tape = Tape::new();
        let scores = self.choice_scores(&self.store, &mut tape, choices, None)?;
        let probs = tape.softmax(scores, 1)?;
        Ok(choice_score(tape.value(scores).to_vec(), tape.value(probs).to_vec()))
    }

    /// Runs one choice with a pruning trace.
    pub fn trace(&self, input: &GraphQuery) -> Result<(f64, PruneTrace)> {
        let mut tape = Tape::new();
        let mut trace = PruneTrace::default();
        let f = self.forward(&mut tape, input, None, Some(&mut trace))?;
        Ok((tape.scalar(f.score), trace))
    }
}

/// Argmax with ties to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn choice_score(scores: Vec<f64>, probabilities: Vec<f64>) -> ChoiceScore {
    ChoiceScore {
        prediction: argmax(&scores),
        scores,
        probabilities,
    }
}
