//! Consistency splitting: partition preservation queries by whether the
//! pre-edit model's free generation agrees with the annotated answer.
//!
//! The judge is pluggable; the built-in one normalizes both strings and
//! tests containment of the answer in the greedy decode.

use crate::metrics::GroundTruthAnswer;
use crate::model::{greedy_decode, ToyTransformer};
use crate::par;

use super::dataset::PreservationRecord;
use super::HarnessError;

/// Decides whether a model response is consistent with an annotated answer.
pub trait ConsistencyJudge: Sync {
    fn is_consistent(
        &self,
        model: &ToyTransformer,
        query: &str,
        answer: &GroundTruthAnswer,
    ) -> Result<bool, HarnessError>;
}

/// Lowercase, strip everything but alphanumerics, then test containment of
/// the answer in a bounded greedy decode.
#[derive(Debug, Clone)]
pub struct ContainmentJudge {
    /// Number of tokens to decode before testing containment.
    pub decode_budget: usize,
}

impl Default for ContainmentJudge {
    fn default() -> Self {
        Self { decode_budget: 8 }
    }
}

pub(crate) fn normalize(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl ConsistencyJudge for ContainmentJudge {
    fn is_consistent(
        &self,
        model: &ToyTransformer,
        query: &str,
        answer: &GroundTruthAnswer,
    ) -> Result<bool, HarnessError> {
        let tokens = model.vocab().tokenize(query)?;
        let decoded = greedy_decode(model, &tokens, self.decode_budget, model.vocab().eos_id())?;
        let response = model.vocab().detokenize(&decoded);
        Ok(normalize(&response).contains(&normalize(answer.text())))
    }
}

/// Outcome of a consistency split.
#[derive(Debug, Clone)]
pub struct ConsistencySplit {
    pub consistent: Vec<PreservationRecord>,
    pub inconsistent: Vec<PreservationRecord>,
}

impl ConsistencySplit {
    pub fn sizes(&self) -> (usize, usize) {
        (self.consistent.len(), self.inconsistent.len())
    }
}

/// Split preservation records by judge verdict. Every record must carry a
/// ground-truth answer.
pub fn split_by_consistency(
    model: &ToyTransformer,
    records: &[PreservationRecord],
    judge: &dyn ConsistencyJudge,
) -> Result<ConsistencySplit, HarnessError> {
    for record in records {
        if record.gt_answer.is_none() {
            return Err(HarnessError::MissingGroundTruth { id: record.id.clone() });
        }
    }
    let verdicts = par::map_slice(records, |record| {
        judge.is_consistent(model, &record.query.query, record.gt_answer.as_ref().unwrap())
    });
    let mut split = ConsistencySplit { consistent: Vec::new(), inconsistent: Vec::new() };
    for (record, verdict) in records.iter().zip(verdicts) {
        if verdict? {
            split.consistent.push(record.clone());
        } else {
            split.inconsistent.push(record.clone());
        }
    }
    Ok(split)
}
