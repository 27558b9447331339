//! String-match grounding of text onto knowledge-graph concepts.

use std::collections::BTreeSet;

use super::graph::{ConceptId, KnowledgeGraph};

/// Longest n-gram tried during grounding.
pub const MAX_NGRAM: usize = 4;

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "been", "but", "by", "can", "could", "did",
    "do", "does", "for", "from", "had", "has", "have", "he", "her", "his", "how", "i", "if", "in",
    "into", "is", "it", "its", "may", "might", "of", "on", "or", "she", "should", "so", "than",
    "that", "the", "their", "them", "there", "they", "this", "to", "was", "we", "were", "what",
    "when", "where", "which", "while", "who", "why", "will", "with", "would", "you", "your",
];

pub fn is_stopword(w: &str) -> bool {
    STOPWORDS.binary_search(&w).is_ok()
}

/// Lowercases and splits on whitespace, dropping surrounding punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '_')
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Surface form plus crude lemma candidates (`playing` -> `play`, `playe`;
/// `singing` -> `sing`, `singe`).
pub fn lemma_variants(word: &str) -> Vec<String> {
    let mut out = vec![word.to_string()];
    let mut push = |s: String| {
        if s.len() >= 2 && !out.contains(&s) {
            out.push(s);
        }
    };
    if let Some(stem) = word.strip_suffix("ing").filter(|s| s.len() >= 2) {
        push(stem.to_string());
        push(format!("{stem}e"));
        let b = stem.as_bytes();
        if b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] {
            push(stem[..stem.len() - 1].to_string());
        }
    } else if let Some(stem) = word.strip_suffix("ies") {
        push(format!("{stem}y"));
    } else if let Some(stem) = word.strip_suffix("ed").filter(|s| s.len() >= 2) {
        push(stem.to_string());
        push(format!("{stem}e"));
    } else if word.ends_with('s') && !word.ends_with("ss") && word.len() > 3 {
        push(word[..word.len() - 1].to_string());
        if let Some(stem) = word.strip_suffix("es") {
            push(stem.to_string());
        }
    }
    out
}

/// Every concept named by an n-gram (n ≤ 4, words joined by `_`) of the
/// token sequence, where each word may also appear as one of its lemma
/// variants. Single stopwords never ground. Returns a set.
pub fn ground_concepts<S: AsRef<str>>(tokens: &[S], kg: &KnowledgeGraph) -> BTreeSet<ConceptId> {
    let variants: Vec<Vec<String>> = tokens
        .iter()
        .map(|t| lemma_variants(&t.as_ref().to_lowercase()))
        .collect();
    let mut found = BTreeSet::new();
    for start in 0..variants.len() {
        for n in 1..=MAX_NGRAM.min(variants.len() - start) {
            if n == 1 && is_stopword(&variants[start][0]) {
                continue;
            }
            let mut partial = vec![String::new()];
            for (k, vars) in variants[start..start + n].iter().enumerate() {
                partial = partial
                    .iter()
                    .flat_map(|p| {
                        vars.iter().map(move |v| {
                            if k == 0 {
                                v.clone()
                            } else {
                                format!("{p}_{v}")
                            }
                        })
                    })
                    .collect();
            }
            found.extend(partial.iter().filter_map(|name| kg.concept_id(name)));
        }
    }
    found
}
