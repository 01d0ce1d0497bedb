//! A small deterministic decoder-only transformer.
//!
//! The model exists to be edited: every layer's MLP second projection
//! (`w_out`) is an editable matrix, and the forward pass exposes the hidden
//! vectors entering it (the key space) alongside the logits.
//!
//! Loaded models are immutable values. [`ToyTransformer::apply_delta`]
//! returns a new model rather than mutating, so a model can be shared across
//! threads for concurrent read-only forwards.

mod backward;
mod checkpoint;
mod forward;
mod score;
mod vocab;

pub use backward::objective_and_gradient;
pub use forward::{forward, last_token_logits, ForwardTrace, Intervention, LogitVector, ProbDist};
pub use score::{greedy_decode, teacher_force_score, TeacherForcedToken};
pub use vocab::{TokenId, Vocab, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN};

pub(crate) use backward::{answer_objective_with_cache, grad_wrt_intervention};
pub(crate) use forward::forward_with_cache;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty input text")]
    EmptyInput,
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("sequence length {len} exceeds max_seq {max}")]
    SeqTooLong { len: usize, max: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab}")]
    BadToken { id: usize, vocab: usize },
    #[error("invalid (layer, index) location ({layer}, {index})")]
    BadLocation { layer: usize, index: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeError { expected: String, got: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Model dimensions plus the weight-initialization seed.
///
/// The same seed always produces bit-identical weights: initialization draws
/// from ChaCha8 through a fixed Box-Muller transform in a documented order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d_model: 32, n_layers: 6, n_heads: 4, max_seq: 16, seed: 42 }
    }
}

impl ModelConfig {
    /// MLP hidden width; keys live in this space.
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.max_seq == 0 {
            return Err(ModelError::InvalidConfig("all dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Per-layer weights. `w_out` (`d_model x d_ff`, mapping key space to the
/// residual stream) is the editable matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
    /// d_ff x d_model, first MLP projection.
    pub w_in: DMatrix<f64>,
    /// d_model x d_ff, the editable second MLP projection.
    pub w_out: DMatrix<f64>,
}

/// Deterministic decoder-only transformer over a fixed vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    config: ModelConfig,
    vocab: Vocab,
    /// vocab x d_model token embeddings.
    embed: DMatrix<f64>,
    layers: Vec<LayerWeights>,
    /// vocab x d_model unembedding (logits = unembed * final state).
    unembed: DMatrix<f64>,
}

/// Standard deviation of all initialized weights.
pub const INIT_STD: f64 = 0.02;

/// Scale applied to the sinusoidal position encoding added to embeddings,
/// keeping positional and token signals at comparable magnitude.
pub const POS_SCALE: f64 = 0.02;

/// Gaussian stream: ChaCha8 uniforms pushed through Box-Muller, consumed one
/// value at a time in a fixed order so seeds reproduce across platforms.
struct GaussianSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSource {
    fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    fn uniform(&mut self) -> f64 {
        // 53-bit mantissa uniform in (0, 1].
        ((self.rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
    }

    fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    fn matrix(&mut self, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
        // Filled row-major so the draw order is part of the format.
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = std * self.standard_normal();
            }
        }
        m
    }
}

impl ToyTransformer {
    /// Initialize a model with Gaussian (std 0.02) weights drawn from
    /// ChaCha8(seed). Draw order: embeddings, then per layer
    /// wq, wk, wv, wo, w_in, w_out, then the unembedding.
    pub fn new(config: ModelConfig, vocab: Vocab) -> Result<Self, ModelError> {
        config.validate()?;
        let (d, ff, v) = (config.d_model, config.d_ff(), vocab.len());
        let mut src = GaussianSource::new(config.seed);
        let embed = src.matrix(v, d, INIT_STD);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                wq: src.matrix(d, d, INIT_STD),
                wk: src.matrix(d, d, INIT_STD),
                wv: src.matrix(d, d, INIT_STD),
                wo: src.matrix(d, d, INIT_STD),
                w_in: src.matrix(ff, d, INIT_STD),
                w_out: src.matrix(d, ff, INIT_STD),
            })
            .collect();
        let unembed = src.matrix(v, d, INIT_STD);
        Ok(Self { config, vocab, embed, layers, unembed })
    }

    /// Assemble a model from explicit weights (checkpoint loading).
    pub(crate) fn from_parts(
        config: ModelConfig,
        vocab: Vocab,
        embed: DMatrix<f64>,
        layers: Vec<LayerWeights>,
        unembed: DMatrix<f64>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let model = Self { config, vocab, embed, layers, unembed };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<(), ModelError> {
        let (d, ff, v) = (self.config.d_model, self.config.d_ff(), self.vocab.len());
        let expect = |ok: bool, what: &str, got: (usize, usize)| {
            if ok {
                Ok(())
            } else {
                Err(ModelError::ShapeError {
                    expected: what.to_string(),
                    got: format!("{}x{}", got.0, got.1),
                })
            }
        };
        expect(self.embed.shape() == (v, d), "embed vocab x d_model", self.embed.shape())?;
        expect(self.unembed.shape() == (v, d), "unembed vocab x d_model", self.unembed.shape())?;
        if self.layers.len() != self.config.n_layers {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} layers, got {}",
                self.config.n_layers,
                self.layers.len()
            )));
        }
        for l in &self.layers {
            for w in [&l.wq, &l.wk, &l.wv, &l.wo] {
                expect(w.shape() == (d, d), "attention d_model x d_model", w.shape())?;
            }
            expect(l.w_in.shape() == (ff, d), "w_in d_ff x d_model", l.w_in.shape())?;
            expect(l.w_out.shape() == (d, ff), "w_out d_model x d_ff", l.w_out.shape())?;
        }
        let finite = self.embed.iter().all(|x| x.is_finite())
            && self.unembed.iter().all(|x| x.is_finite())
            && self.layers.iter().all(|l| {
                [&l.wq, &l.wk, &l.wv, &l.wo, &l.w_in, &l.w_out]
                    .iter()
                    .all(|m| m.iter().all(|x| x.is_finite()))
            });
        if !finite {
            return Err(ModelError::InvalidConfig("non-finite weight entry".into()));
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn embed(&self) -> &DMatrix<f64> {
        &self.embed
    }

    pub fn unembed(&self) -> &DMatrix<f64> {
        &self.unembed
    }

    pub fn layer(&self, layer: usize) -> Option<&LayerWeights> {
        self.layers.get(layer)
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    /// Editable matrix of a layer.
    pub fn w_out(&self, layer: usize) -> Result<&DMatrix<f64>, ModelError> {
        self.layers
            .get(layer)
            .map(|l| &l.w_out)
            .ok_or(ModelError::BadLocation { layer, index: 0 })
    }

    /// Return a model identical except `w_out[layer] += delta`. The receiver
    /// is unchanged.
    pub fn apply_delta(&self, layer: usize, delta: &DMatrix<f64>) -> Result<Self, ModelError> {
        let current = self.w_out(layer)?;
        if delta.shape() != current.shape() {
            return Err(ModelError::ShapeError {
                expected: format!("{}x{}", current.nrows(), current.ncols()),
                got: format!("{}x{}", delta.nrows(), delta.ncols()),
            });
        }
        if !delta.iter().all(|x| x.is_finite()) {
            return Err(ModelError::ShapeError {
                expected: "finite delta entries".into(),
                got: "non-finite entry".into(),
            });
        }
        let mut edited = self.clone();
        edited.layers[layer].w_out += delta;
        Ok(edited)
    }

    /// Hidden vector entering `w_out` (length d_ff) for `tokens` at the given
    /// layer and token index.
    pub fn extract_key(
        &self,
        tokens: &[TokenId],
        layer: usize,
        index: usize,
    ) -> Result<DVector<f64>, ModelError> {
        if layer >= self.config.n_layers || index >= tokens.len() {
            return Err(ModelError::BadLocation { layer, index });
        }
        let trace = forward(self, tokens)?;
        Ok(trace.hidden_pre_wout[layer][index].clone())
    }

    fn validate_tokens(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if tokens.len() > self.config.max_seq {
            return Err(ModelError::SeqTooLong { len: tokens.len(), max: self.config.max_seq });
        }
        if let Some(&id) = tokens.iter().find(|&&id| id >= self.vocab.len()) {
            return Err(ModelError::BadToken { id, vocab: self.vocab.len() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{tiny_model, tiny_vocab};

    #[test]
    fn same_seed_gives_bit_identical_weights() {
        let a = ToyTransformer::new(ModelConfig::default(), tiny_vocab()).unwrap();
        let b = ToyTransformer::new(ModelConfig::default(), tiny_vocab()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seed_changes_weights() {
        let a = tiny_model(1);
        let b = tiny_model(2);
        assert_ne!(a, b);
    }

    #[test]
    fn config_validation_rejects_bad_heads() {
        let cfg = ModelConfig { d_model: 30, n_heads: 4, ..ModelConfig::default() };
        assert!(matches!(cfg.validate(), Err(ModelError::InvalidConfig(_))));
    }

    #[test]
    fn apply_delta_leaves_original_untouched() {
        let model = tiny_model(7);
        let zero = DMatrix::zeros(model.config.d_model, model.config.d_ff());
        let before = model.clone();
        let edited = model.apply_delta(0, &zero).unwrap();
        assert_eq!(model, before);
        assert_eq!(edited, model);
    }

    #[test]
    fn apply_delta_then_inverse_restores_weights() {
        let model = tiny_model(7);
        let (d, ff) = (model.config.d_model, model.config.d_ff());
        let delta = DMatrix::from_fn(d, ff, |r, c| 0.01 * ((r * ff + c) as f64).sin());
        let restored = model
            .apply_delta(1, &delta)
            .unwrap()
            .apply_delta(1, &(-delta.clone()))
            .unwrap();
        let diff = (restored.layers[1].w_out.clone() - model.layers[1].w_out.clone()).norm();
        assert!(diff < 1e-12, "restore diff {diff}");
    }

    #[test]
    fn apply_delta_is_additive_in_the_delta() {
        let model = tiny_model(7);
        let (d, ff) = (model.config.d_model, model.config.d_ff());
        let a = DMatrix::from_fn(d, ff, |r, c| 0.02 * ((r + c) as f64).sin());
        let b = DMatrix::from_fn(d, ff, |r, c| 0.015 * ((2 * r + c) as f64).cos());
        let combined = model.apply_delta(1, &(a.clone() + b.clone())).unwrap();
        let sequential = model.apply_delta(1, &a).unwrap().apply_delta(1, &b).unwrap();
        let tokens = vec![0usize, 3, 5, 4];
        let x = forward(&combined, &tokens).unwrap();
        let y = forward(&sequential, &tokens).unwrap();
        for (lx, ly) in x.logits.iter().zip(&y.logits) {
            let diff = (lx.scores.clone() - ly.scores.clone()).abs().max();
            assert!(diff < 1e-10, "logit gap {diff}");
        }
    }

    #[test]
    fn apply_delta_rejects_shape_mismatch() {
        let model = tiny_model(7);
        let bad = DMatrix::zeros(2, 3);
        assert!(matches!(model.apply_delta(0, &bad), Err(ModelError::ShapeError { .. })));
    }

    #[test]
    fn rank_one_delta_acts_as_outer_product() {
        // (W + v k^T) k = W k + v for a unit key k.
        let model = tiny_model(3);
        let (d, ff) = (model.config.d_model, model.config.d_ff());
        let mut k = DVector::from_fn(ff, |i, _| ((i + 1) as f64).cos());
        k /= k.norm();
        let v = DVector::from_fn(d, |i, _| 0.1 * (i as f64 + 0.5));
        let delta = &v * k.transpose();
        let edited = model.apply_delta(0, &delta).unwrap();
        let got = &edited.layers[0].w_out * &k;
        let want = &model.layers[0].w_out * &k + &v;
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn extract_key_checks_location() {
        let model = tiny_model(1);
        let tokens = vec![model.vocab().bos_id(), 3];
        assert!(matches!(
            model.extract_key(&tokens, 99, 0),
            Err(ModelError::BadLocation { .. })
        ));
        assert!(matches!(
            model.extract_key(&tokens, 0, 99),
            Err(ModelError::BadLocation { .. })
        ));
    }
}
