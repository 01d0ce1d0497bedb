//! Table emission: a CSV with Table-style headers plus a JSON mirror.
//!
//! Column order and float formatting are deterministic; identical sweep
//! results serialize to identical bytes.

use std::fs;
use std::path::Path;

use super::sweep::{SweepResult, SweepRow};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

/// Fixed-precision decimal rendering with `sig` significant digits.
pub fn format_sig(x: f64, sig: usize) -> String {
    if x.is_nan() {
        return "NA".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Header row: condition, lambda, one norm column per edited layer, the
/// metric columns, then efficacy and generalization.
pub fn csv_header(result: &SweepResult) -> Vec<String> {
    let mut cols = vec!["condition".to_string(), "lambda".to_string()];
    cols.extend(result.layers.iter().map(|l| format!("norm_l{l}")));
    cols.extend(result.metric_columns.iter().map(|c| c.name()));
    cols.push("Efficacy".into());
    cols.push("Generalization".into());
    cols
}

fn opt(value: Option<f64>) -> String {
    value.map_or_else(|| "NA".into(), |v| format_sig(v, 6))
}

fn row_cells(result: &SweepResult, row: &SweepRow) -> Vec<String> {
    let mut cells = vec![row.condition.clone(), opt(row.lambda)];
    match &row.norms {
        Some(norms) => cells.extend(norms.iter().map(|&n| format_sig(n, 6))),
        None => cells.extend(result.layers.iter().map(|_| "NA".to_string())),
    }
    match &row.report {
        Some(report) => {
            cells.extend(result.metric_columns.iter().map(|c| opt(c.value(report))));
        }
        None => cells.extend(result.metric_columns.iter().map(|_| "NA".to_string())),
    }
    cells.push(opt(row.efficacy));
    cells.push(opt(row.generalization));
    cells
}

pub fn csv_string(result: &SweepResult) -> String {
    let mut lines = vec![csv_header(result).join(",")];
    for row in &result.rows {
        lines.push(row_cells(result, row).join(","));
    }
    if let Some(summary) = &result.summary {
        let blank_tail = ["NA".to_string(), "NA".to_string()];

        let mut tau = vec!["kendall_tau_abs".to_string(), "NA".to_string()];
        tau.extend(summary.norm_tau_abs_vs_lambda.iter().map(|t| opt(*t)));
        tau.extend(summary.columns.iter().map(|c| opt(c.tau_abs_vs_mean_norm)));
        tau.extend(blank_tail.clone());
        lines.push(tau.join(","));

        let mut coverage = vec!["coverage".to_string(), "NA".to_string()];
        coverage.extend(result.layers.iter().map(|_| "NA".to_string()));
        coverage.extend(summary.columns.iter().map(|c| opt(c.coverage)));
        coverage.extend(blank_tail.clone());
        lines.push(coverage.join(","));

        let mut std_row = vec!["std".to_string(), "NA".to_string()];
        std_row.extend(result.layers.iter().map(|_| "NA".to_string()));
        std_row.extend(summary.columns.iter().map(|c| opt(Some(c.std_dev))));
        std_row.extend(blank_tail);
        lines.push(std_row.join(","));
    }
    lines.push(String::new());
    lines.join("\n")
}

pub fn json_string(result: &SweepResult) -> Result<String, HarnessError> {
    let mut text = serde_json::to_string_pretty(result)?;
    text.push('\n');
    Ok(text)
}

/// Write the table in the requested format.
pub fn emit_table(
    result: &SweepResult,
    format: TableFormat,
    path: &Path,
) -> Result<(), HarnessError> {
    let text = match format {
        TableFormat::Csv => csv_string(result),
        TableFormat::Json => json_string(result)?,
    };
    fs::write(path, text)?;
    Ok(())
}
