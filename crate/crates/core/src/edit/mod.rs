//! Batch knowledge editing: key/target collection, the closed-form solve,
//! and multi-layer residual spreading.
//!
//! All items are edited jointly in one batch from the pre-edit model, never
//! sequentially per item. Preservation keys are collected once against the
//! pre-edit model and shared across every layer solve and every lambda.

mod solve;
mod target;

pub use solve::{objective_value, regularizer_norms, solve_delta, SolveOutcome};
pub use target::{compute_target, AscentOpts, TargetAscent};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{forward_with_cache, ModelError, TokenId, ToyTransformer, Vocab};
use crate::par;

#[derive(Debug, Error)]
pub enum EditError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeError { expected: String, got: String },
    #[error("numerical failure: {0}")]
    NumericalError(String),
    #[error("optimization diverged at step {step}")]
    OptimizationDiverged { step: usize },
    #[error("invalid lambda {0}")]
    InvalidLambda(f64),
    #[error("edited layers must be non-empty, strictly ascending, and within the model")]
    BadLayers,
    #[error("no edit items")]
    EmptyBatch,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A single knowledge edit: the query that triggers the fact and the new
/// answer it should produce, with optional counterfactual and evaluation
/// companions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditItem {
    pub query: String,
    pub target_new: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_old: Option<String>,
    /// Index of the decisive token within the tokenized query (BOS at 0).
    /// Defaults to the last query token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decisive_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paraphrases: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub neighborhood_queries: Vec<String>,
}

impl EditItem {
    pub fn validate(&self) -> Result<(), String> {
        if self.query.is_empty() {
            return Err("query must be non-empty".into());
        }
        if self.target_new.is_empty() {
            return Err("target_new must be non-empty".into());
        }
        Ok(())
    }
}

/// A query whose behavior an edit should leave alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationQuery {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decisive_index: Option<usize>,
}

/// Key vectors (columns, each length d_ff) for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyMatrix {
    pub columns: DMatrix<f64>,
    pub layer: usize,
}

/// Target vectors (columns, each length d_model) aligned with a KeyMatrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    pub columns: DMatrix<f64>,
    pub layer: usize,
}

/// A tokenized query plus the decisive position to read keys at.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryKeySite {
    pub tokens: Vec<TokenId>,
    pub position: usize,
}

/// Tokenize a query and resolve its decisive position (defaults to the last
/// token).
pub fn key_site(
    vocab: &Vocab,
    query: &str,
    decisive_index: Option<usize>,
) -> Result<QueryKeySite, EditError> {
    let tokens = vocab.tokenize(query)?;
    let position = decisive_index.unwrap_or(tokens.len() - 1);
    if position >= tokens.len() {
        return Err(EditError::Model(ModelError::BadLocation { layer: 0, index: position }));
    }
    Ok(QueryKeySite { tokens, position })
}

/// Collect key vectors for a batch of sites at one layer. Column order
/// matches input order.
pub fn collect_keys(
    model: &ToyTransformer,
    sites: &[QueryKeySite],
    layer: usize,
) -> Result<KeyMatrix, EditError> {
    if sites.is_empty() {
        return Err(EditError::EmptyBatch);
    }
    let keys = par::map_slice(sites, |site| model.extract_key(&site.tokens, layer, site.position));
    let keys: Vec<DVector<f64>> = keys.into_iter().collect::<Result<_, _>>()?;
    Ok(KeyMatrix { columns: DMatrix::from_columns(&keys), layer })
}

/// Per-layer diagnostics of one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEditStats {
    pub layer: usize,
    /// Mean over preservation keys of ||delta k_j||.
    pub mean_reg_norm: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    pub jittered: bool,
}

/// Per-layer deltas plus regularizer diagnostics for one lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSolution {
    pub lambda: f64,
    pub layers: Vec<usize>,
    pub deltas: Vec<DMatrix<f64>>,
    pub stats: Vec<LayerEditStats>,
}

impl EditSolution {
    /// Mean regularizer norm across edited layers (the reference signal the
    /// sweep statistics correlate against).
    pub fn mean_norm_across_layers(&self) -> f64 {
        self.stats.iter().map(|s| s.mean_reg_norm).sum::<f64>() / self.stats.len() as f64
    }
}

/// Everything about a batch edit that does not depend on lambda: converged
/// target activations, the residual each layer must absorb, and the
/// pre-edit preservation keys per layer.
#[derive(Debug, Clone)]
pub struct EditPlan {
    layers: Vec<usize>,
    sites: Vec<QueryKeySite>,
    residuals: Vec<DVector<f64>>,
    preserved_keys: Vec<KeyMatrix>,
    pub ascents: Vec<TargetAscent>,
}

impl EditPlan {
    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn preserved_keys(&self) -> &[KeyMatrix] {
        &self.preserved_keys
    }
}

fn validate_layers(model: &ToyTransformer, layers: &[usize]) -> Result<(), EditError> {
    let ascending = layers.windows(2).all(|w| w[0] < w[1]);
    if layers.is_empty() || !ascending || *layers.last().unwrap() >= model.config().n_layers {
        return Err(EditError::BadLayers);
    }
    Ok(())
}

/// Build the lambda-independent part of a batch edit: run the target ascent
/// for every item at the last edited layer and collect pre-edit preservation
/// keys at every edited layer.
pub fn prepare_edit(
    model: &ToyTransformer,
    items: &[EditItem],
    layers: &[usize],
    preservation: &[PreservationQuery],
    opts: &AscentOpts,
) -> Result<EditPlan, EditError> {
    validate_layers(model, layers)?;
    if items.is_empty() {
        return Err(EditError::EmptyBatch);
    }
    let vocab = model.vocab();
    let last_layer = *layers.last().unwrap();

    let sites: Vec<QueryKeySite> = items
        .iter()
        .map(|item| key_site(vocab, &item.query, item.decisive_index))
        .collect::<Result<_, _>>()?;
    let answers: Vec<Vec<TokenId>> = items
        .iter()
        .map(|item| vocab.tokenize_continuation(&item.target_new).map_err(EditError::from))
        .collect::<Result<_, _>>()?;

    let prepared = par::map_slice(
        &sites.iter().zip(&answers).collect::<Vec<_>>(),
        |(site, answer)| -> Result<(TargetAscent, DVector<f64>), EditError> {
            let ascent =
                compute_target(model, &site.tokens, answer, last_layer, site.position, opts)?;
            let (_, cache) = forward_with_cache(model, &site.tokens, None)?;
            let pre = &cache.layers[last_layer].mlp_out[site.position];
            let residual = &ascent.target - pre;
            Ok((ascent, residual))
        },
    );
    let mut ascents = Vec::with_capacity(items.len());
    let mut residuals = Vec::with_capacity(items.len());
    for entry in prepared {
        let (ascent, residual) = entry?;
        ascents.push(ascent);
        residuals.push(residual);
    }

    // Preservation keys are a pre-edit quantity, shared across lambdas.
    let preserved_sites: Vec<QueryKeySite> = preservation
        .iter()
        .map(|p| key_site(vocab, &p.query, p.decisive_index))
        .collect::<Result<_, _>>()?;
    let preserved_keys = layers
        .iter()
        .map(|&layer| {
            if preserved_sites.is_empty() {
                Ok(KeyMatrix { columns: DMatrix::zeros(model.config().d_ff(), 0), layer })
            } else {
                collect_keys(model, &preserved_sites, layer)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(EditPlan { layers: layers.to_vec(), sites, residuals, preserved_keys, ascents })
}

/// Solve and apply the plan at one lambda: each layer absorbs an equal share
/// of the remaining residual, solved in ascending order with keys recomputed
/// against the partially edited model.
pub fn apply_edit(
    model: &ToyTransformer,
    plan: &EditPlan,
    lambda: f64,
) -> Result<(ToyTransformer, EditSolution), EditError> {
    if !(lambda >= 0.0) {
        return Err(EditError::InvalidLambda(lambda));
    }
    let share = 1.0 / plan.layers.len() as f64;
    let residual_matrix = DMatrix::from_columns(&plan.residuals);

    let mut edited = model.clone();
    let mut deltas = Vec::with_capacity(plan.layers.len());
    let mut stats = Vec::with_capacity(plan.layers.len());
    for (li, &layer) in plan.layers.iter().enumerate() {
        let keys = collect_keys(&edited, &plan.sites, layer)?;
        let w = edited.w_out(layer)?;
        // current MLP outputs at the decisive sites, then move them by the
        // layer's share of the residual
        let current = w * &keys.columns;
        let targets = TargetMatrix { columns: &current + &residual_matrix * share, layer };
        let preserved = &plan.preserved_keys[li];

        let objective_before = objective_value(
            w,
            &DMatrix::zeros(w.nrows(), w.ncols()),
            &keys,
            &targets,
            preserved,
            lambda,
        )?;
        let outcome = solve_delta(w, &keys, &targets, preserved, lambda)?;
        let objective_after =
            objective_value(w, &outcome.delta, &keys, &targets, preserved, lambda)?;
        let mean_reg_norm = regularizer_norms(&outcome.delta, preserved)?;

        edited = edited.apply_delta(layer, &outcome.delta)?;
        stats.push(LayerEditStats {
            layer,
            mean_reg_norm,
            objective_before,
            objective_after,
            jittered: outcome.jittered,
        });
        deltas.push(outcome.delta);
    }

    Ok((edited, EditSolution { lambda, layers: plan.layers.clone(), deltas, stats }))
}

/// One-call batch edit: prepare the plan and apply it at a single lambda.
pub fn multi_layer_edit(
    model: &ToyTransformer,
    items: &[EditItem],
    layers: &[usize],
    lambda: f64,
    preservation: &[PreservationQuery],
    opts: &AscentOpts,
) -> Result<(ToyTransformer, EditSolution), EditError> {
    let plan = prepare_edit(model, items, layers, preservation, opts)?;
    apply_edit(model, &plan, lambda)
}

/// Serializable form of an [`EditSolution`], with deltas in the checkpoint's
/// row-major matrix layout when requested.
#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionExport {
    pub schema_version: u32,
    pub lambda: f64,
    pub mean_norm_across_layers: f64,
    pub layers: Vec<LayerEditStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<DeltaExport>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DeltaExport {
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl EditSolution {
    pub fn export(&self, include_deltas: bool) -> SolutionExport {
        let deltas = include_deltas.then(|| {
            self.layers
                .iter()
                .zip(&self.deltas)
                .map(|(&layer, m)| DeltaExport {
                    layer,
                    rows: m.nrows(),
                    cols: m.ncols(),
                    data: (0..m.nrows())
                        .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
                        .map(|(r, c)| m[(r, c)])
                        .collect(),
                })
                .collect()
        });
        SolutionExport {
            schema_version: 1,
            lambda: self.lambda,
            mean_norm_across_layers: self.mean_norm_across_layers(),
            layers: self.stats.clone(),
            deltas,
        }
    }
}
