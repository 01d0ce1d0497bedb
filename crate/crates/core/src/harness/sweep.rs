//! Lambda-sweep orchestration: every row is produced from the identical
//! pre-edit model (never chained), metrics compare pre against post, and a
//! statistics block summarizes sensitivity and alignment per column.

use serde::{Deserialize, Serialize};

use crate::edit::{apply_edit, prepare_edit, EditPlan};
use crate::metrics::{
    c_accuracy, kl_specificity, s_accuracy, t_accuracy, topk_overlap, MetricReport,
};
use crate::model::{greedy_decode, teacher_force_score, ToyTransformer};
use crate::par;
use crate::stats::{coverage_proportion, kendall_tau_values, std_dev, StatsError};

use super::config::{ExperimentConfig, MetricToggle};
use super::dataset::{Dataset, DatasetKind, EditRecord};
use super::HarnessError;

/// A named sweep-table column over the metric suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MetricColumn {
    SAcc,
    TAcc,
    CAcc,
    Kl,
    Top(usize),
}

impl MetricColumn {
    pub fn name(self) -> String {
        match self {
            MetricColumn::SAcc => "S-acc".into(),
            MetricColumn::TAcc => "T-acc".into(),
            MetricColumn::CAcc => "C-acc".into(),
            MetricColumn::Kl => "D_KL".into(),
            MetricColumn::Top(k) => format!("Top-{k}"),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "S-acc" => Some(MetricColumn::SAcc),
            "T-acc" => Some(MetricColumn::TAcc),
            "C-acc" => Some(MetricColumn::CAcc),
            "D_KL" => Some(MetricColumn::Kl),
            _ => name.strip_prefix("Top-").and_then(|k| k.parse().ok().map(MetricColumn::Top)),
        }
    }

    /// Theoretical range, where one exists (the KL column is unbounded).
    pub fn bounded_range(self) -> Option<(f64, f64)> {
        match self {
            MetricColumn::Kl => None,
            _ => Some((0.0, 100.0)),
        }
    }

    pub fn value(self, report: &MetricReport) -> Option<f64> {
        match self {
            MetricColumn::SAcc => Some(report.s_accuracy),
            MetricColumn::TAcc => Some(report.t_accuracy),
            MetricColumn::CAcc => report.c_accuracy,
            MetricColumn::Kl => Some(report.kl_mean),
            MetricColumn::Top(k) => report.topk_overlap.get(&k).copied(),
        }
    }
}

impl TryFrom<String> for MetricColumn {
    type Error = String;

    fn try_from(name: String) -> Result<Self, Self::Error> {
        MetricColumn::parse(&name).ok_or_else(|| format!("unknown metric column {name:?}"))
    }
}

impl From<MetricColumn> for String {
    fn from(column: MetricColumn) -> String {
        column.name()
    }
}

/// Columns implied by the toggle set for a given dataset kind, in canonical
/// order. The C-accuracy column only applies to counterfactual datasets.
pub fn metric_columns(
    toggles: &[MetricToggle],
    kind: DatasetKind,
    topk: &[usize],
) -> Vec<MetricColumn> {
    let mut columns = Vec::new();
    let has = |t: MetricToggle| toggles.contains(&t);
    if has(MetricToggle::SAcc) {
        columns.push(MetricColumn::SAcc);
    }
    if has(MetricToggle::TAcc) {
        columns.push(MetricColumn::TAcc);
    }
    if has(MetricToggle::CAcc) && kind == DatasetKind::Counterfactual {
        columns.push(MetricColumn::CAcc);
    }
    if has(MetricToggle::Kl) {
        columns.push(MetricColumn::Kl);
    }
    if has(MetricToggle::TopK) {
        columns.extend(topk.iter().map(|&k| MetricColumn::Top(k)));
    }
    columns
}

/// Fraction of edit items whose greedy decode on the edit query begins with
/// the target tokens, as a percentage.
pub fn efficacy(model: &ToyTransformer, items: &[EditRecord]) -> Result<f64, HarnessError> {
    if items.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let hits = par::map_slice(items, |record| -> Result<bool, HarnessError> {
        let vocab = model.vocab();
        let query = vocab.tokenize(&record.item.query)?;
        let want = vocab.tokenize_continuation(record.item.target_new.trim())?;
        let decoded = greedy_decode(model, &query, want.len(), vocab.eos_id())?;
        Ok(decoded.len() >= want.len() && decoded[..want.len()] == want[..])
    });
    let hits: Vec<bool> = hits.into_iter().collect::<Result<_, _>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64 * 100.0)
}

/// Counterfactual efficacy variant: success when the new target's mean
/// per-token log-probability exceeds the old one's under teacher forcing on
/// the edit query.
pub fn efficacy_contrastive(
    model: &ToyTransformer,
    items: &[EditRecord],
) -> Result<f64, HarnessError> {
    if items.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let hits = par::map_slice(items, |record| -> Result<bool, HarnessError> {
        let old = record
            .item
            .target_old
            .as_ref()
            .ok_or_else(|| HarnessError::MissingGroundTruth { id: record.id.clone() })?;
        let vocab = model.vocab();
        let query = vocab.tokenize(&record.item.query)?;
        let mean_lp = |answer: &str| -> Result<f64, HarnessError> {
            let ids = vocab.tokenize_continuation(answer.trim())?;
            let scored = teacher_force_score(model, &query, &ids)?;
            Ok(scored.iter().map(|t| t.log_prob()).sum::<f64>() / scored.len() as f64)
        };
        Ok(mean_lp(&record.item.target_new)? > mean_lp(old)?)
    });
    let hits: Vec<bool> = hits.into_iter().collect::<Result<_, _>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64 * 100.0)
}

/// Efficacy over paraphrase queries, pooled across (item, paraphrase) pairs.
pub fn generalization(model: &ToyTransformer, items: &[EditRecord]) -> Result<f64, HarnessError> {
    if items.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    for record in items {
        if record.item.paraphrases.is_empty() {
            return Err(HarnessError::MissingParaphrases { id: record.id.clone() });
        }
    }
    let pairs: Vec<(&EditRecord, &String)> = items
        .iter()
        .flat_map(|r| r.item.paraphrases.iter().map(move |p| (r, p)))
        .collect();
    let hits = par::map_slice(&pairs, |(record, paraphrase)| -> Result<bool, HarnessError> {
        let vocab = model.vocab();
        let query = vocab.tokenize(paraphrase)?;
        let want = vocab.tokenize_continuation(record.item.target_new.trim())?;
        let decoded = greedy_decode(model, &query, want.len(), vocab.eos_id())?;
        Ok(decoded.len() >= want.len() && decoded[..want.len()] == want[..])
    });
    let hits: Vec<bool> = hits.into_iter().collect::<Result<_, _>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64 * 100.0)
}

/// One sweep-table row. Exactly one of `error` or the data fields is
/// populated; the pre-edit row has `lambda = None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub condition: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Mean ||delta k_j|| per edited layer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub norms: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficacy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub efficacy_contrastive: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generalization: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Mean regularizer norm across edited layers (the alignment reference).
    pub fn mean_norm(&self) -> Option<f64> {
        self.norms
            .as_ref()
            .map(|n| n.iter().sum::<f64>() / n.len() as f64)
    }
}

/// Per-column sensitivity/alignment summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub column: MetricColumn,
    /// |Kendall tau| against the cross-layer mean regularizer norm;
    /// None when the column is entirely tied (degenerate).
    pub tau_abs_vs_mean_norm: Option<f64>,
    /// (max - min) / range, for columns with a theoretical range.
    pub coverage: Option<f64>,
    /// Population standard deviation.
    pub std_dev: f64,
}

/// Statistics block computed over the lambda rows (the pre-edit reference
/// row is excluded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    /// Cross-layer mean regularizer norm per lambda row.
    pub mean_norms: Vec<f64>,
    /// Per edited layer: |tau| between that layer's norm column and lambda.
    pub norm_tau_abs_vs_lambda: Vec<Option<f64>>,
    pub columns: Vec<ColumnSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub schema_version: u32,
    pub dataset: String,
    pub kind: DatasetKind,
    pub layers: Vec<usize>,
    pub topk: Vec<usize>,
    pub metric_columns: Vec<MetricColumn>,
    pub rows: Vec<SweepRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<SweepSummary>,
}

pub const SWEEP_SCHEMA_VERSION: u32 = 1;

impl SweepResult {
    pub fn all_rows_ok(&self) -> bool {
        self.rows.iter().all(SweepRow::is_ok)
    }

    pub fn from_json_str(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Full metric suite for one (pre, post) pair over the dataset.
pub fn evaluate_metrics(
    pre: &ToyTransformer,
    post: &ToyTransformer,
    dataset: &Dataset,
    topk: &[usize],
) -> Result<MetricReport, HarnessError> {
    let queries = dataset.preservation_query_strings();
    if queries.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let labeled = dataset.labeled_queries();
    if labeled.is_empty() {
        return Err(HarnessError::MissingGroundTruth { id: dataset.name.clone() });
    }
    let s = s_accuracy(post, &labeled)?;
    let t = t_accuracy(post, &labeled)?;
    let c = if dataset.kind == DatasetKind::Counterfactual {
        Some(c_accuracy(post, &dataset.items())?)
    } else {
        None
    };
    let kl = kl_specificity(pre, post, &queries)?;
    let mut overlaps = std::collections::BTreeMap::new();
    for &k in topk {
        overlaps.insert(k, topk_overlap(pre, post, &queries, k)?);
    }
    Ok(MetricReport {
        s_accuracy: s,
        t_accuracy: t,
        c_accuracy: c,
        kl_mean: kl,
        topk_overlap: overlaps,
        n_queries: queries.len(),
    })
}

fn lambda_label(lambda: f64) -> String {
    format!("lambda={lambda:e}")
}

fn tau_abs(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, HarnessError> {
    match kendall_tau_values(xs, ys) {
        Ok(tau) => Ok(Some(tau.abs())),
        Err(StatsError::Degenerate) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn build_summary(
    rows: &[SweepRow],
    columns: &[MetricColumn],
    layers: &[usize],
) -> Result<Option<SweepSummary>, HarnessError> {
    let ok_rows: Vec<&SweepRow> =
        rows.iter().filter(|r| r.is_ok() && r.lambda.is_some()).collect();
    if ok_rows.len() < 2 {
        return Ok(None);
    }
    let lambdas: Vec<f64> = ok_rows.iter().map(|r| r.lambda.unwrap()).collect();
    let mean_norms: Vec<f64> = ok_rows.iter().map(|r| r.mean_norm().unwrap()).collect();

    let mut norm_tau = Vec::with_capacity(layers.len());
    for li in 0..layers.len() {
        let series: Vec<f64> =
            ok_rows.iter().map(|r| r.norms.as_ref().unwrap()[li]).collect();
        norm_tau.push(tau_abs(&series, &lambdas)?);
    }

    let mut summaries = Vec::with_capacity(columns.len());
    for &column in columns {
        let values: Vec<f64> = ok_rows
            .iter()
            .map(|r| column.value(r.report.as_ref().unwrap()))
            .collect::<Option<_>>()
            .ok_or_else(|| HarnessError::Config(format!(
                "column {} missing from a sweep row",
                column.name()
            )))?;
        let coverage = match column.bounded_range() {
            Some((lo, hi)) => Some(coverage_proportion(&values, lo, hi)?),
            None => None,
        };
        summaries.push(ColumnSummary {
            column,
            tau_abs_vs_mean_norm: tau_abs(&values, &mean_norms)?,
            coverage,
            std_dev: std_dev(&values)?,
        });
    }

    Ok(Some(SweepSummary { mean_norms, norm_tau_abs_vs_lambda: norm_tau, columns: summaries }))
}

/// Run the full sweep: a pre-edit reference row, one row per lambda (each
/// edited from the same pre-edit model), and the summary block. Rows that
/// fail are recorded with an error marker and the sweep continues.
pub fn run_sweep(
    model: &ToyTransformer,
    config: &ExperimentConfig,
    dataset: &Dataset,
) -> Result<SweepResult, HarnessError> {
    config.validate()?;
    if config.edit.layers.last().copied().unwrap_or(0) >= model.config().n_layers {
        return Err(HarnessError::Config("edited layer outside the model".into()));
    }
    let snapshot = model.clone();
    let topk = config.metrics.topk.clone();
    let columns = metric_columns(&config.metrics.enabled, dataset.kind, &topk);
    let counterfactual = dataset.kind == DatasetKind::Counterfactual;
    let has_paraphrases = !dataset.edit_items.is_empty()
        && dataset.edit_items.iter().all(|r| !r.item.paraphrases.is_empty());

    let evaluate_post = |post: &ToyTransformer| -> Result<
        (MetricReport, f64, Option<f64>, Option<f64>),
        HarnessError,
    > {
        let report = evaluate_metrics(model, post, dataset, &topk)?;
        let eff = efficacy(post, &dataset.edit_items)?;
        let eff_c = counterfactual
            .then(|| efficacy_contrastive(post, &dataset.edit_items))
            .transpose()?;
        let gen = has_paraphrases
            .then(|| generalization(post, &dataset.edit_items))
            .transpose()?;
        Ok((report, eff, eff_c, gen))
    };

    // pre-edit reference row
    let (report, eff, eff_c, gen) = evaluate_post(model)?;
    let mut rows = vec![SweepRow {
        condition: "pre-edit".into(),
        lambda: None,
        norms: Some(vec![0.0; config.edit.layers.len()]),
        report: Some(report),
        efficacy: Some(eff),
        efficacy_contrastive: eff_c,
        generalization: gen,
        error: None,
    }];

    // lambda-independent preparation, shared across rows
    let plan: EditPlan = prepare_edit(
        model,
        &dataset.items(),
        &config.edit.layers,
        &dataset.preservation_queries(),
        &config.edit.ascent_opts(),
    )?;

    let lambda_rows = par::map_slice(&config.edit.lambda_grid, |&lambda| {
        let attempt = || -> Result<SweepRow, HarnessError> {
            let (edited, solution) = apply_edit(model, &plan, lambda)?;
            let norms: Vec<f64> = solution.stats.iter().map(|s| s.mean_reg_norm).collect();
            let (report, eff, eff_c, gen) = evaluate_post(&edited)?;
            Ok(SweepRow {
                condition: lambda_label(lambda),
                lambda: Some(lambda),
                norms: Some(norms),
                report: Some(report),
                efficacy: Some(eff),
                efficacy_contrastive: eff_c,
                generalization: gen,
                error: None,
            })
        };
        attempt().unwrap_or_else(|e| SweepRow {
            condition: lambda_label(lambda),
            lambda: Some(lambda),
            norms: None,
            report: None,
            efficacy: None,
            efficacy_contrastive: None,
            generalization: None,
            error: Some(e.to_string()),
        })
    });
    rows.extend(lambda_rows);

    // variable isolation: the pre-edit model must be untouched by the sweep
    assert!(*model == snapshot, "pre-edit model mutated during sweep");

    let summary = build_summary(&rows, &columns, &config.edit.layers)?;
    Ok(SweepResult {
        schema_version: SWEEP_SCHEMA_VERSION,
        dataset: dataset.name.clone(),
        kind: dataset.kind,
        layers: config.edit.layers.clone(),
        topk,
        metric_columns: columns,
        rows,
        summary,
    })
}
