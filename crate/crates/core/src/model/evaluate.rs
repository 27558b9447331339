use serde::{Deserialize, Serialize};

use crate::tensor::Tape;

use super::{argmax, JointLK, PreparedQuestion};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl Category {
    fn from_counts(correct: usize, total: usize) -> Option<Self> {
        (total > 0).then(|| Self {
            correct,
            total,
            accuracy: correct as f64 / total as f64,
        })
    }
}

/// Accuracy overall and split by question-entity count. A category with no
/// questions is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Questions whose forward pass failed; counted as wrong.
    pub failed: usize,
    pub mean_loss: f64,
    pub entity_threshold: usize,
    /// `|V_q| ≤ threshold`.
    pub few_entities: Option<Category>,
    /// `|V_q| > threshold`.
    pub many_entities: Option<Category>,
}

/// Builds a report from `(correct, question entities)` outcomes.
pub fn summarize(outcomes: &[(bool, usize)], threshold: usize) -> EvalReport {
    let count = |pred: &dyn Fn(usize) -> bool| {
        let sel: Vec<bool> = outcomes.iter().filter(|o| pred(o.1)).map(|o| o.0).collect();
        (sel.iter().filter(|&&c| c).count(), sel.len())
    };
    let (correct, total) = count(&|_| true);
    let (fc, ft) = count(&|e| e <= threshold);
    let (mc, mt) = count(&|e| e > threshold);
    EvalReport {
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
        failed: 0,
        mean_loss: 0.0,
        entity_threshold: threshold,
        few_entities: Category::from_counts(fc, ft),
        many_entities: Category::from_counts(mc, mt),
    }
}

pub fn evaluate(model: &JointLK, data: &[PreparedQuestion]) -> EvalReport {
    let mut outcomes = Vec::with_capacity(data.len());
    let mut failed = 0;
    let mut loss = 0.0;
    for q in data {
        let mut tape = Tape::new();
        match model.question_loss(&model.store, &mut tape, q, None) {
            Ok((l, scores)) => {
                loss += tape.scalar(l);
                outcomes.push((argmax(tape.value(scores)) == q.gold, q.question_entities));
            }
            Err(e) => {
                log::warn!("question {} failed: {e}", q.id);
                failed += 1;
                outcomes.push((false, q.question_entities));
            }
        }
    }
    let mut report = summarize(&outcomes, model.config.entity_threshold);
    report.failed = failed;
    let scored = data.len() - failed;
    report.mean_loss = if scored == 0 { f64::NAN } else { loss / scored as f64 };
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_examples() {
        let all: Vec<(bool, usize)> = (0..4).map(|i| (true, i)).collect();
        assert_eq!(summarize(&all, 7).accuracy, 1.0);

        let ten: Vec<(bool, usize)> = (0..10).map(|i| (i < 7, 3 + i)).collect();
        let r = summarize(&ten, 7);
        assert!((r.accuracy - 0.7).abs() < 1e-15);
        assert_eq!(r.few_entities.unwrap().total, 5);
        assert_eq!(r.many_entities.unwrap().correct, 2);

        let small = summarize(&[(true, 2), (false, 3)], 7);
        assert!(small.many_entities.is_none());
        assert_eq!(small.few_entities.unwrap().accuracy, 0.5);
    }
}
