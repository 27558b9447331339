//! Relation vocabulary: raw knowledge-graph relation names merged into a
//! small set of relation types, each with a reverse.

use std::collections::HashMap;

use super::KgError;

pub type RelId = usize;

/// Merged relation for edges from the context node to question entities.
pub const CONTEXT_TO_QUESTION: &str = "ContextToQuestion";
/// Merged relation for edges from the context node to answer entities.
pub const CONTEXT_TO_ANSWER: &str = "ContextToAnswer";

/// Default merge table for ConceptNet relations. A leading `*` on the raw
/// name means the raw relation is the reverse of the merged one, so
/// `(a, HasA, b)` is stored as `(b, PartOf, a)`.
pub const CONCEPTNET_MERGE: &[(&str, &str)] = &[
    ("AtLocation", "AtLocation"),
    ("LocatedNear", "AtLocation"),
    ("Causes", "Causes"),
    ("CausesDesire", "Causes"),
    ("*MotivatedByGoal", "Causes"),
    ("Antonym", "Antonym"),
    ("DistinctFrom", "Antonym"),
    ("HasSubevent", "HasSubevent"),
    ("HasFirstSubevent", "HasSubevent"),
    ("HasLastSubevent", "HasSubevent"),
    ("HasPrerequisite", "HasSubevent"),
    ("Entails", "HasSubevent"),
    ("MannerOf", "HasSubevent"),
    ("IsA", "IsA"),
    ("InstanceOf", "IsA"),
    ("DefinedAs", "IsA"),
    ("PartOf", "PartOf"),
    ("*HasA", "PartOf"),
    ("RelatedTo", "RelatedTo"),
    ("SimilarTo", "RelatedTo"),
    ("Synonym", "RelatedTo"),
    ("CapableOf", "CapableOf"),
    ("CreatedBy", "CreatedBy"),
    ("Desires", "Desires"),
    ("UsedFor", "UsedFor"),
    ("HasContext", "HasContext"),
    ("HasProperty", "HasProperty"),
    ("MadeOf", "MadeOf"),
    ("NotCapableOf", "NotCapableOf"),
    ("NotDesires", "NotDesires"),
    ("ReceivesAction", "ReceivesAction"),
    (CONTEXT_TO_QUESTION, CONTEXT_TO_QUESTION),
    (CONTEXT_TO_ANSWER, CONTEXT_TO_ANSWER),
];

/// Maps raw relation names to merged ids. Ids `0..n` are the merged
/// relations; `n..2n` are their reverses, `reverse(r) = (r + n) mod 2n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationVocab {
    merged: Vec<String>,
    raw: HashMap<String, (RelId, bool)>,
}

impl Default for RelationVocab {
    fn default() -> Self {
        Self::conceptnet()
    }
}

impl RelationVocab {
    pub fn conceptnet() -> Self {
        Self::from_pairs(CONCEPTNET_MERGE.iter().copied())
            .expect("built-in merge table is well formed")
    }

    fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, KgError> {
        let mut merged: Vec<String> = Vec::new();
        let mut raw = HashMap::new();
        for (i, (r, m)) in pairs.into_iter().enumerate() {
            let (name, reversed) = match r.strip_prefix('*') {
                Some(n) => (n, true),
                None => (r, false),
            };
            if name.is_empty() || m.is_empty() {
                return Err(KgError::RelationTable {
                    line: i + 1,
                    message: "empty relation name".into(),
                });
            }
            let id = match merged.iter().position(|x| x == m) {
                Some(id) => id,
                None => {
                    merged.push(m.to_string());
                    merged.len() - 1
                }
            };
            if raw.insert(name.to_string(), (id, reversed)).is_some() {
                return Err(KgError::RelationTable {
                    line: i + 1,
                    message: format!("raw relation `{name}` listed twice"),
                });
            }
        }
        for ctx in [CONTEXT_TO_QUESTION, CONTEXT_TO_ANSWER] {
            if !merged.iter().any(|m| m == ctx) {
                merged.push(ctx.to_string());
                raw.insert(ctx.to_string(), (merged.len() - 1, false));
            }
        }
        Ok(Self { merged, raw })
    }

    /// Parses `raw_name<TAB>merged_name` lines. Blank lines and lines
    /// starting with `#` are skipped. The two context relations are added
    /// when the table omits them.
    pub fn parse(text: &str) -> Result<Self, KgError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(r), Some(m), None) => pairs.push((i + 1, r.trim(), m.trim())),
                _ => {
                    return Err(KgError::RelationTable {
                        line: i + 1,
                        message: "expected `raw<TAB>merged`".into(),
                    })
                }
            }
        }
        Self::from_pairs(pairs.iter().map(|(_, r, m)| (*r, *m))).map_err(|e| match e {
            KgError::RelationTable { line, message } => KgError::RelationTable {
                line: pairs.get(line - 1).map_or(line, |p| p.0),
                message,
            },
            other => other,
        })
    }

    /// Number of merged relations (without reverses).
    pub fn num_merged(&self) -> usize {
        self.merged.len()
    }

    /// Number of relation ids including reverses.
    pub fn num_relations(&self) -> usize {
        2 * self.merged.len()
    }

    pub fn reverse(&self, r: RelId) -> RelId {
        let n = self.merged.len();
        (r + n) % (2 * n)
    }

    /// Merged id of a raw relation and whether the raw direction is
    /// reversed. Merged names resolve to themselves.
    pub fn resolve(&self, raw: &str) -> Option<(RelId, bool)> {
        self.raw
            .get(raw)
            .copied()
            .or_else(|| self.id(raw).map(|id| (id, false)))
    }

    pub fn id(&self, merged: &str) -> Option<RelId> {
        self.merged.iter().position(|m| m == merged)
    }

    /// Display name; reverse relations carry a `*` prefix.
    pub fn name(&self, r: RelId) -> String {
        let n = self.merged.len();
        if r < n {
            self.merged[r].clone()
        } else {
            format!("*{}", self.merged[r % n])
        }
    }

    pub fn merged_names(&self) -> &[String] {
        &self.merged
    }

    pub fn context_to_question(&self) -> RelId {
        self.id(CONTEXT_TO_QUESTION).expect("context relations always present")
    }

    pub fn context_to_answer(&self) -> RelId {
        self.id(CONTEXT_TO_ANSWER).expect("context relations always present")
    }

    pub fn is_context(&self, r: RelId) -> bool {
        let base = r % self.merged.len();
        base == self.context_to_question() || base == self.context_to_answer()
    }

    /// Serializes back to the tab-separated table format.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(&String, &(RelId, bool))> = self.raw.iter().collect();
        rows.sort_by(|a, b| (a.1 .0, a.1 .1, a.0).cmp(&(b.1 .0, b.1 .1, b.0)));
        let mut out = String::new();
        for (name, (id, rev)) in rows {
            out.push_str(if *rev { "*" } else { "" });
            out.push_str(name);
            out.push('\t');
            out.push_str(&self.merged[*id]);
            out.push('\n');
        }
        out
    }
}
