use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encode::TokenVocab;
use crate::error::{Error, Result};
use crate::kg::{retrieve_subgraph, ConceptId, KnowledgeGraph, NodeScorer, Subgraph};
use crate::model::{GraphQuery, PreparedQuestion};

pub const DATASET_FORMAT: &str = "jointlk.dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    /// Question token ids.
    pub question: Vec<usize>,
    /// Token ids per answer choice.
    pub choices: Vec<Vec<usize>>,
    /// Grounded question concepts.
    pub vq: Vec<ConceptId>,
    /// Grounded concepts per answer choice.
    pub va: Vec<Vec<ConceptId>>,
    pub gold: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    records: usize,
}

impl DatasetRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.choices.len() < 2 {
            return Err(format!("{} choices, at least 2 needed", self.choices.len()));
        }
        if self.va.len() != self.choices.len() {
            return Err(format!("{} choices but {} grounded answer sets", self.choices.len(), self.va.len()));
        }
        if self.gold >= self.choices.len() {
            return Err(format!("gold index {} out of range", self.gold));
        }
        if self.vq.is_empty() {
            return Err("no grounded question concepts".into());
        }
        Ok(())
    }
}

pub fn dataset_to_string(records: &[DatasetRecord]) -> String {
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        records: records.len(),
    };
    let mut s = serde_json::to_string(&header).expect("header serializes");
    s.push('\n');
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    s
}

/// Parses a header line followed by one record per line. `origin` names
/// the source in errors.
pub fn parse_dataset(text: &str, origin: &str) -> Result<Vec<DatasetRecord>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| err(1, "missing header line".into()))?;
    let header: Header = serde_json::from_str(first).map_err(|e| err(1, format!("bad header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
        return Err(err(
            1,
            format!(
                "unsupported dataset {} v{}, expected {DATASET_FORMAT} v{DATASET_VERSION}",
                header.format, header.version
            ),
        ));
    }
    let mut records = Vec::with_capacity(header.records);
    for (i, line) in lines {
        let r: DatasetRecord = serde_json::from_str(line).map_err(|e| err(i + 1, e.to_string()))?;
        r.validate().map_err(|m| err(i + 1, format!("record {}: {m}", r.id)))?;
        records.push(r);
    }
    if records.len() != header.records {
        return Err(err(
            0,
            format!("header announces {} records, found {}", header.records, records.len()),
        ));
    }
    Ok(records)
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    std::fs::write(path, dataset_to_string(records)).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

/// One retrieved subgraph per answer choice.
pub fn retrieve_choices(
    record: &DatasetRecord,
    kg: &KnowledgeGraph,
    max_nodes: usize,
    scorer: &dyn NodeScorer,
) -> Result<Vec<Subgraph>> {
    let vq = record.vq.iter().copied().collect();
    record
        .va
        .iter()
        .map(|va| {
            let va = va.iter().copied().collect();
            retrieve_subgraph(&vq, &va, kg, max_nodes, scorer).map_err(Error::from)
        })
        .collect()
}

/// Retrieves subgraphs and assembles the network input for one record. The
/// token sequence of a choice is the question followed by the choice.
pub fn prepare_record(
    record: &DatasetRecord,
    kg: &KnowledgeGraph,
    vocab: &TokenVocab,
    max_nodes: usize,
    scorer: &dyn NodeScorer,
) -> Result<PreparedQuestion> {
    let subs = retrieve_choices(record, kg, max_nodes, scorer)?;
    let choices = subs
        .iter()
        .zip(&record.choices)
        .map(|(sub, toks)| {
            let mut tokens = record.question.clone();
            tokens.extend_from_slice(toks);
            GraphQuery::from_subgraph(tokens, sub, vocab)
        })
        .collect();
    Ok(PreparedQuestion {
        id: record.id.clone(),
        choices,
        gold: record.gold,
        question_entities: record.vq.len(),
    })
}

pub fn prepare_dataset(
    records: &[DatasetRecord],
    kg: &KnowledgeGraph,
    vocab: &TokenVocab,
    max_nodes: usize,
    scorer: &dyn NodeScorer,
) -> Result<Vec<PreparedQuestion>> {
    records
        .iter()
        .map(|r| prepare_record(r, kg, vocab, max_nodes, scorer))
        .collect()
}
