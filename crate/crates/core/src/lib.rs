//! Joint language-model / knowledge-graph reasoning for multiple-choice
//! question answering.
//!
//! A query (question + choice) is encoded token by token, a subgraph is
//! retrieved from a knowledge graph, and a stack of layers alternates
//! relational graph attention, dense bidirectional token↔node attention and
//! attention-guided node pruning before scoring the pair.

pub mod encode;
pub mod error;
pub mod fusion;
pub mod gnn;
pub mod harness;
pub mod kg;
pub mod model;
pub mod prune;
pub mod registry;
pub mod tensor;

pub use error::{Error, Result};
