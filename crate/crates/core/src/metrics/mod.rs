//! Specificity metrics over (pre-edit model, post-edit model, query set).
//!
//! Ground-truth metrics compare the model against annotated answers
//! (S/T/C accuracy); ground-truth-free metrics compare the model against its
//! own pre-edit behavior (last-token KL divergence and top-k support
//! overlap). Per-query work is independent and runs through the
//! data-parallel map with a deterministic reduction order.

mod gt_based;
mod gt_free;

pub use gt_based::{c_accuracy, s_accuracy, t_accuracy, GroundTruthAnswer, LabeledQuery};
pub use gt_free::{
    kl_divergence, kl_specificity, overlap_from_indicators, topk_overlap, OverlapIdentity,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("item {0} lacks the counterfactual fields required by C-accuracy")]
    MissingCounterfactual(String),
    #[error("models do not share a vocabulary")]
    ModelMismatch,
    #[error("k = {k} out of range for vocabulary of size {vocab}")]
    BadK { k: usize, vocab: usize },
    #[error("bad indicator vector: {0}")]
    BadIndicator(String),
    #[error("empty ground-truth answer")]
    EmptyAnswer,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One full metric evaluation: GT-based accuracies, mean KL, and top-k
/// overlaps, with the query count they were computed over.
///
/// Serializes to one JSON object; [`MetricReport::csv_header`] /
/// [`MetricReport::csv_row`] give the matching one-row CSV form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Exact greedy-decode match rate, percent.
    pub s_accuracy: f64,
    /// Teacher-forced top-1 token rate, percent.
    pub t_accuracy: f64,
    /// Old-versus-new answer likelihood comparison, percent; absent for
    /// datasets without counterfactual targets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_accuracy: Option<f64>,
    /// Mean KL divergence pre‖post in nats.
    pub kl_mean: f64,
    /// k → mean top-k support overlap, percent.
    pub topk_overlap: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

impl MetricReport {
    /// Column names matching the sweep-table layout.
    pub fn csv_header(topk: &[usize], with_c: bool) -> Vec<String> {
        let mut cols = vec!["S-acc".to_string(), "T-acc".to_string()];
        if with_c {
            cols.push("C-acc".to_string());
        }
        cols.push("D_KL".to_string());
        cols.extend(topk.iter().map(|k| format!("Top-{k}")));
        cols
    }

    pub fn csv_row(&self, topk: &[usize], with_c: bool) -> Vec<f64> {
        let mut row = vec![self.s_accuracy, self.t_accuracy];
        if with_c {
            row.push(self.c_accuracy.unwrap_or(f64::NAN));
        }
        row.push(self.kl_mean);
        row.extend(topk.iter().map(|k| self.topk_overlap.get(k).copied().unwrap_or(f64::NAN)));
        row
    }
}
