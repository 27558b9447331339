use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::graph::ConceptId;
use super::relations::RelId;
use super::KgError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Context,
    Question,
    Answer,
    Bridge,
}

impl NodeType {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Context => "context",
            NodeType::Question => "question",
            NodeType::Answer => "answer",
            NodeType::Bridge => "bridge",
        }
    }

    pub fn is_entity(self) -> bool {
        matches!(self, NodeType::Question | NodeType::Answer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphNode {
    /// Position in the knowledge graph; `None` for the context node.
    pub concept: Option<ConceptId>,
    pub name: String,
    #[serde(rename = "type")]
    pub node_type: NodeType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SubgraphEdge {
    pub src: usize,
    pub rel: RelId,
    pub dst: usize,
}

/// Retrieved evidence for one (question, choice) pair. Edges are directed
/// and index into `nodes`; reverse edges are present explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub nodes: Vec<SubgraphNode>,
    pub edges: Vec<SubgraphEdge>,
    pub context: Option<usize>,
    /// Size of the relation id space the edges are drawn from.
    pub num_relations: usize,
}

#[derive(Serialize)]
struct ExportNode<'a> {
    id: usize,
    concept: &'a str,
    #[serde(rename = "type")]
    node_type: NodeType,
}

#[derive(Serialize)]
struct ExportEdge<'a> {
    src: usize,
    rel: &'a str,
    dst: usize,
}

#[derive(Serialize)]
struct Export<'a> {
    nodes: Vec<ExportNode<'a>>,
    edges: Vec<ExportEdge<'a>>,
    context: Option<usize>,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_types(&self) -> Vec<NodeType> {
        self.nodes.iter().map(|n| n.node_type).collect()
    }

    pub fn concept_set(&self) -> BTreeSet<ConceptId> {
        self.nodes.iter().filter_map(|n| n.concept).collect()
    }

    pub fn count(&self, t: NodeType) -> usize {
        self.nodes.iter().filter(|n| n.node_type == t).count()
    }

    /// Number of edges leaving and entering node `i` (self-loops count in both).
    pub fn degree(&self, i: usize) -> (usize, usize) {
        let out = self.edges.iter().filter(|e| e.src == i).count();
        let inc = self.edges.iter().filter(|e| e.dst == i).count();
        (out, inc)
    }

    /// Checks the structural invariants: indices in range, at most one
    /// context node, and (if present) the context node linked in both
    /// directions to every question and answer entity.
    pub fn validate(&self) -> Result<(), KgError> {
        let bad = |m: String| Err(KgError::InvalidSubgraph(m));
        let n = self.nodes.len();
        for e in &self.edges {
            if e.src >= n || e.dst >= n {
                return bad(format!("edge {e:?} outside {n} nodes"));
            }
            if e.rel >= self.num_relations {
                return bad(format!("edge {e:?} has relation beyond {}", self.num_relations));
            }
        }
        let contexts: Vec<usize> = (0..n)
            .filter(|&i| self.nodes[i].node_type == NodeType::Context)
            .collect();
        match (self.context, contexts.as_slice()) {
            (None, []) => Ok(()),
            (Some(c), [only]) if c == *only => {
                for (i, node) in self.nodes.iter().enumerate() {
                    if !node.node_type.is_entity() {
                        continue;
                    }
                    let fwd = self.edges.iter().any(|e| e.src == c && e.dst == i);
                    let back = self.edges.iter().any(|e| e.src == i && e.dst == c);
                    if !fwd || !back {
                        return bad(format!("entity {} not linked both ways to context", node.name));
                    }
                }
                Ok(())
            }
            _ => bad(format!(
                "context index {:?} but context-typed nodes at {contexts:?}",
                self.context
            )),
        }
    }

    /// JSON export with nodes `(id, concept, type)`, edges `(src, rel, dst)`
    /// using relation display names, and the context index.
    pub fn to_export_json(&self, relation_name: impl Fn(RelId) -> String) -> String {
        let names: Vec<String> = self.edges.iter().map(|e| relation_name(e.rel)).collect();
        let export = Export {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| ExportNode {
                    id,
                    concept: &n.name,
                    node_type: n.node_type,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .zip(&names)
                .map(|(e, rel)| ExportEdge {
                    src: e.src,
                    rel,
                    dst: e.dst,
                })
                .collect(),
            context: self.context,
        };
        serde_json::to_string_pretty(&export).expect("subgraph export is plain data")
    }
}
