//! Subgraph retrieval: grounded entities, the bridge concepts joining them
//! by 1- and 2-hop paths, induced edges, and an injected context node.

use std::collections::{BTreeMap, BTreeSet};

use super::graph::{ConceptId, KnowledgeGraph};
use super::scoring::{rank, NodeScorer};
use super::subgraph::{NodeType, Subgraph, SubgraphEdge, SubgraphNode};
use super::KgError;

pub const DEFAULT_MAX_NODES: usize = 200;

/// Name given to the injected context node.
pub const CONTEXT_NAME: &str = "<context>";

/// Concepts outside `entities` adjacent to at least two distinct entities,
/// i.e. the middle node of some 2-hop path between two entities. Sorted.
pub fn bridge_candidates(entities: &BTreeSet<ConceptId>, kg: &KnowledgeGraph) -> Vec<ConceptId> {
    let mut hits: BTreeMap<ConceptId, usize> = BTreeMap::new();
    for &e in entities {
        for &nb in kg.neighbors(e) {
            if !entities.contains(&nb) {
                *hits.entry(nb).or_default() += 1;
            }
        }
    }
    hits.into_iter().filter(|&(_, n)| n >= 2).map(|(c, _)| c).collect()
}

/// Retrieves the evidence subgraph for question concepts `vq` and answer
/// concepts `va`, then injects the context node.
///
/// Entities are always kept, so the result can exceed `max_nodes + 1` only
/// when `|vq ∪ va| > max_nodes`. A concept in both sets is typed as a
/// question entity.
pub fn retrieve_subgraph(
    vq: &BTreeSet<ConceptId>,
    va: &BTreeSet<ConceptId>,
    kg: &KnowledgeGraph,
    max_nodes: usize,
    scorer: &dyn NodeScorer,
) -> Result<Subgraph, KgError> {
    if vq.is_empty() && va.is_empty() {
        return Err(KgError::NoGroundedConcepts);
    }
    if let Some(&c) = vq.iter().chain(va).find(|&&c| c >= kg.num_concepts()) {
        return Err(KgError::ConceptOutOfRange(c));
    }
    let entities: BTreeSet<ConceptId> = vq.union(va).copied().collect();
    let mut bridges = bridge_candidates(&entities, kg);
    let budget = max_nodes.saturating_sub(entities.len());
    if bridges.len() > budget {
        let scores = scorer.score(&bridges, &entities, kg);
        bridges = rank(&bridges, &scores);
        bridges.truncate(budget);
        bridges.sort_unstable();
    }

    let mut nodes = Vec::with_capacity(entities.len() + bridges.len() + 1);
    let typed = vq
        .iter()
        .map(|&c| (c, NodeType::Question))
        .chain(va.difference(vq).map(|&c| (c, NodeType::Answer)))
        .chain(bridges.iter().map(|&c| (c, NodeType::Bridge)));
    for (c, t) in typed {
        nodes.push(SubgraphNode {
            concept: Some(c),
            name: kg.concept_name(c).to_string(),
            node_type: t,
        });
    }
    let index: BTreeMap<ConceptId, usize> = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.concept.expect("concept nodes only"), i))
        .collect();
    let mut edges = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        for &(rel, tail) in kg.out_edges(n.concept.expect("concept nodes only")) {
            if let Some(&j) = index.get(&tail) {
                edges.push(SubgraphEdge { src: i, rel, dst: j });
            }
        }
    }
    edges.sort_unstable();

    let sub = Subgraph {
        nodes,
        edges,
        context: None,
        num_relations: kg.relations().num_relations(),
    };
    add_context_node(sub, kg.relations())
}

/// Appends the context node and links it in both directions to every
/// question entity (`ContextToQuestion`) and answer entity
/// (`ContextToAnswer`).
pub fn add_context_node(
    mut sub: Subgraph,
    relations: &super::RelationVocab,
) -> Result<Subgraph, KgError> {
    if sub.context.is_some() || sub.nodes.iter().any(|n| n.node_type == NodeType::Context) {
        return Err(KgError::ContextAlreadyPresent);
    }
    let c = sub.nodes.len();
    let (to_q, to_a) = (relations.context_to_question(), relations.context_to_answer());
    for (i, n) in sub.nodes.iter().enumerate() {
        let rel = match n.node_type {
            NodeType::Question => to_q,
            NodeType::Answer => to_a,
            _ => continue,
        };
        sub.edges.push(SubgraphEdge { src: c, rel, dst: i });
        sub.edges.push(SubgraphEdge {
            src: i,
            rel: relations.reverse(rel),
            dst: c,
        });
    }
    sub.nodes.push(SubgraphNode {
        concept: None,
        name: CONTEXT_NAME.to_string(),
        node_type: NodeType::Context,
    });
    sub.context = Some(c);
    sub.edges.sort_unstable();
    Ok(sub)
}
