//! Relevance scoring of bridge candidates when retrieval exceeds its node
//! budget. Scorers are selected by name.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::OnceLock;

use crate::registry::{Registry, UnknownStrategy};

use super::graph::{ConceptId, KnowledgeGraph};

pub trait NodeScorer: Send + Sync {
    fn name(&self) -> &'static str;

    /// One score per candidate; higher is more relevant.
    fn score(
        &self,
        candidates: &[ConceptId],
        entities: &BTreeSet<ConceptId>,
        kg: &KnowledgeGraph,
    ) -> Vec<f64>;
}

/// `w_links * |N(c) ∩ entities| + w_specific / degree_percentile(c)` where
/// the percentile is the fraction of candidates whose degree is ≤ deg(c).
/// Rare (low-degree) nodes get the larger bonus.
#[derive(Debug, Clone, Copy)]
pub struct StructuralScorer {
    pub w_links: f64,
    pub w_specific: f64,
}

impl Default for StructuralScorer {
    fn default() -> Self {
        Self {
            w_links: 1.0,
            w_specific: 0.1,
        }
    }
}

impl NodeScorer for StructuralScorer {
    fn name(&self) -> &'static str {
        "structural"
    }

    fn score(
        &self,
        candidates: &[ConceptId],
        entities: &BTreeSet<ConceptId>,
        kg: &KnowledgeGraph,
    ) -> Vec<f64> {
        let degrees: Vec<usize> = candidates.iter().map(|&c| kg.degree(c)).collect();
        let n = candidates.len() as f64;
        candidates
            .iter()
            .zip(&degrees)
            .map(|(&c, &deg)| {
                let links = kg
                    .neighbors(c)
                    .iter()
                    .filter(|nb| entities.contains(nb))
                    .count() as f64;
                let at_or_below = degrees.iter().filter(|&&d| d <= deg).count() as f64;
                self.w_links * links + self.w_specific * n / at_or_below
            })
            .collect()
    }
}

fn registry() -> &'static Registry<dyn NodeScorer> {
    static REG: OnceLock<Registry<dyn NodeScorer>> = OnceLock::new();
    REG.get_or_init(|| {
        let mut r: Registry<dyn NodeScorer> = Registry::new("node scorer");
        r.register("structural", |_| Box::new(StructuralScorer::default()))
            .register("neighbor-count", |_| {
                Box::new(StructuralScorer {
                    w_links: 1.0,
                    w_specific: 0.0,
                })
            });
        r
    })
}

pub fn scorer_by_name(name: &str) -> Result<Box<dyn NodeScorer>, UnknownStrategy> {
    registry().create(name, &())
}

pub fn scorer_names() -> Vec<&'static str> {
    registry().names()
}

/// Candidates sorted by descending score, ties by lower concept id.
pub fn rank(candidates: &[ConceptId], scores: &[f64]) -> Vec<ConceptId> {
    let mut order: Vec<(ConceptId, f64)> = candidates.iter().copied().zip(scores.iter().copied()).collect();
    order.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    order.into_iter().map(|(c, _)| c).collect()
}
