use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use super::relations::{RelId, RelationVocab};
use super::KgError;

pub type ConceptId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub head: ConceptId,
    pub rel: RelId,
    pub tail: ConceptId,
}

/// Immutable concept graph with merged relation ids and materialized
/// reverse edges.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    concepts: Vec<String>,
    index: HashMap<String, ConceptId>,
    relations: RelationVocab,
    edges: Vec<Edge>,
    out: Vec<Vec<(RelId, ConceptId)>>,
    neighbors: Vec<Vec<ConceptId>>,
}

fn read(path: &Path) -> Result<String, KgError> {
    std::fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl KnowledgeGraph {
    /// Loads the edge file, concept vocabulary and (optionally) a relation
    /// merge table; without a table the ConceptNet default is used.
    pub fn load(
        edges_path: &Path,
        vocab_path: &Path,
        relations_path: Option<&Path>,
    ) -> Result<Self, KgError> {
        let relations = match relations_path {
            Some(p) => RelationVocab::parse(&read(p)?)?,
            None => RelationVocab::conceptnet(),
        };
        let vocab = read(vocab_path)?;
        let edges = read(edges_path)?;
        Self::parse(&edges, &vocab, relations)
    }

    pub fn parse(edges_text: &str, vocab_text: &str, relations: RelationVocab) -> Result<Self, KgError> {
        let mut concepts = Vec::new();
        let mut index = HashMap::new();
        for (i, line) in vocab_text.lines().enumerate() {
            let name = line.trim();
            if name.is_empty() {
                continue;
            }
            if index.insert(name.to_string(), concepts.len()).is_some() {
                return Err(KgError::DuplicateConcept {
                    line: i + 1,
                    name: name.to_string(),
                });
            }
            concepts.push(name.to_string());
        }

        let mut triples = Vec::new();
        for (i, line) in edges_text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [h, r, t] = fields.as_slice() else {
                return Err(KgError::Malformed {
                    line: i + 1,
                    message: format!("expected 3 tab-separated fields, got {}", fields.len()),
                });
            };
            let lookup = |name: &str| {
                index.get(name.trim()).copied().ok_or_else(|| KgError::UnknownConcept {
                    line: i + 1,
                    name: name.trim().to_string(),
                })
            };
            let (h, t) = (lookup(h)?, lookup(t)?);
            let (rel, reversed) =
                relations
                    .resolve(r.trim())
                    .ok_or_else(|| KgError::UnknownRelation {
                        line: i + 1,
                        name: r.trim().to_string(),
                    })?;
            triples.push(if reversed { (t, rel, h) } else { (h, rel, t) });
        }
        Self::build(concepts, index, relations, &triples)
    }

    /// Builds a graph from concept names and `(head, merged relation, tail)`
    /// triples given by merged relation name.
    pub fn from_triples(
        concepts: &[&str],
        triples: &[(&str, &str, &str)],
        relations: RelationVocab,
    ) -> Result<Self, KgError> {
        let mut edges = String::new();
        for (h, r, t) in triples {
            edges.push_str(&format!("{h}\t{r}\t{t}\n"));
        }
        Self::parse(&edges, &concepts.join("\n"), relations)
    }

    /// Builds a graph from concept names and `(head, merged id, tail)`
    /// triples. Concept names must be unique.
    pub fn from_ids(
        concepts: Vec<String>,
        triples: &[(ConceptId, RelId, ConceptId)],
        relations: RelationVocab,
    ) -> Result<Self, KgError> {
        let mut index = HashMap::with_capacity(concepts.len());
        for (i, name) in concepts.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(KgError::DuplicateConcept {
                    line: i + 1,
                    name: name.clone(),
                });
            }
        }
        if let Some(&(h, _, t)) = triples
            .iter()
            .find(|&&(h, r, t)| h >= concepts.len() || t >= concepts.len() || r >= relations.num_merged())
        {
            return Err(KgError::ConceptOutOfRange(h.max(t)));
        }
        Self::build(concepts, index, relations, triples)
    }

    fn build(
        concepts: Vec<String>,
        index: HashMap<String, ConceptId>,
        relations: RelationVocab,
        triples: &[(ConceptId, RelId, ConceptId)],
    ) -> Result<Self, KgError> {
        if triples.is_empty() {
            return Err(KgError::EmptyGraph);
        }
        let mut set = BTreeSet::new();
        for &(h, r, t) in triples {
            set.insert(Edge { head: h, rel: r, tail: t });
            set.insert(Edge {
                head: t,
                rel: relations.reverse(r),
                tail: h,
            });
        }
        let edges: Vec<Edge> = set.into_iter().collect();
        let mut out = vec![Vec::new(); concepts.len()];
        let mut nb: Vec<BTreeSet<ConceptId>> = vec![BTreeSet::new(); concepts.len()];
        for e in &edges {
            out[e.head].push((e.rel, e.tail));
            if e.head != e.tail {
                nb[e.head].insert(e.tail);
            }
        }
        Ok(Self {
            concepts,
            index,
            relations,
            edges,
            out,
            neighbors: nb.into_iter().map(|s| s.into_iter().collect()).collect(),
        })
    }

    pub fn relations(&self) -> &RelationVocab {
        &self.relations
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn concept_id(&self, name: &str) -> Option<ConceptId> {
        self.index.get(name).copied()
    }

    pub fn concept_name(&self, id: ConceptId) -> &str {
        &self.concepts[id]
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    /// All directed edges, reverse edges included, sorted.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn out_edges(&self, c: ConceptId) -> &[(RelId, ConceptId)] {
        &self.out[c]
    }

    /// Distinct neighbors ignoring direction and relation, sorted.
    pub fn neighbors(&self, c: ConceptId) -> &[ConceptId] {
        &self.neighbors[c]
    }

    pub fn degree(&self, c: ConceptId) -> usize {
        self.neighbors[c].len()
    }

    /// Edge file content with one line per forward triple.
    pub fn edges_text(&self) -> String {
        let n = self.relations.num_merged();
        let mut s = String::new();
        for e in self.edges.iter().filter(|e| e.rel < n) {
            s.push_str(&format!(
                "{}\t{}\t{}\n",
                self.concepts[e.head],
                self.relations.name(e.rel),
                self.concepts[e.tail]
            ));
        }
        s
    }

    pub fn vocab_text(&self) -> String {
        let mut s = self.concepts.join("\n");
        s.push('\n');
        s
    }
}
