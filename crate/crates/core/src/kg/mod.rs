//! Knowledge-graph storage, concept grounding and per-question subgraph
//! retrieval.

pub mod graph;
pub mod grounding;
pub mod relations;
pub mod retrieval;
pub mod scoring;
pub mod subgraph;

pub use graph::{ConceptId, Edge, KnowledgeGraph};
pub use grounding::{ground_concepts, tokenize};
pub use relations::{RelId, RelationVocab};
pub use retrieval::{add_context_node, retrieve_subgraph, DEFAULT_MAX_NODES};
pub use scoring::{scorer_by_name, scorer_names, NodeScorer, StructuralScorer};
pub use subgraph::{NodeType, Subgraph, SubgraphEdge, SubgraphNode};

#[derive(Debug, thiserror::Error)]
pub enum KgError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("relation table line {line}: {message}")]
    RelationTable { line: usize, message: String },
    #[error("vocabulary line {line}: duplicate concept `{name}`")]
    DuplicateConcept { line: usize, name: String },
    #[error("edge line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("edge line {line}: unknown concept `{name}`")]
    UnknownConcept { line: usize, name: String },
    #[error("edge line {line}: unknown relation `{name}`")]
    UnknownRelation { line: usize, name: String },
    #[error("knowledge graph has no edges")]
    EmptyGraph,
    #[error("no grounded question or answer concepts")]
    NoGroundedConcepts,
    #[error("concept id {0} is not in the knowledge graph")]
    ConceptOutOfRange(ConceptId),
    #[error("subgraph already has a context node")]
    ContextAlreadyPresent,
    #[error("invalid subgraph: {0}")]
    InvalidSubgraph(String),
}
