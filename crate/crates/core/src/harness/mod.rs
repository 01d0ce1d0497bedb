//! Experiment harness: dataset I/O, configuration, consistency splitting,
//! efficacy scoring, the lambda sweep, and table emission.

mod config;
mod dataset;
pub mod fixtures;
mod split;
mod sweep;
mod table;

pub use config::{
    EditSection, ExperimentConfig, MetricToggle, MetricsSection, ModelSection, OutputSection,
    OUT_DIR_ENV,
};
pub use dataset::{
    Dataset, DatasetKind, EditRecord, PreservationRecord, DATASET_SCHEMA_VERSION,
};
pub use split::{split_by_consistency, ConsistencyJudge, ConsistencySplit, ContainmentJudge};
pub use sweep::{
    efficacy, efficacy_contrastive, evaluate_metrics, generalization, metric_columns, run_sweep,
    ColumnSummary, MetricColumn, SweepResult, SweepRow, SweepSummary, SWEEP_SCHEMA_VERSION,
};
pub use table::{csv_header, csv_string, emit_table, format_sig, json_string, TableFormat};

use thiserror::Error;

use crate::edit::EditError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::stats::StatsError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset error at line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error("missing ground-truth answer for {id}")]
    MissingGroundTruth { id: String },
    #[error("item {id} has no paraphrases")]
    MissingParaphrases { id: String },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}
