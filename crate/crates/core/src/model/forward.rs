//! Causal forward pass with hidden-state capture and optional intervention.

use nalgebra::DVector;

use super::{ModelError, TokenId, ToyTransformer, POS_SCALE};

/// Epsilon inside the RMS normalizer.
pub(crate) const RMS_EPS: f64 = 1e-6;

/// Raw pre-softmax scores over the vocabulary at one position.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    pub scores: DVector<f64>,
}

impl LogitVector {
    /// Index of the highest score; ties break toward the lowest token id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    /// Ids of the k highest scores, ties broken by lowest id, so the result
    /// always has exactly k elements and `top_k(a) ⊆ top_k(b)` for a ≤ b.
    pub fn top_k(&self, k: usize) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.scores.len()).collect();
        ids.sort_unstable_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("finite logits")
                .then(a.cmp(&b))
        });
        ids.truncate(k);
        ids
    }

    /// Numerically stable softmax (max subtraction before exponentiation);
    /// the result sums to 1 within 1e-9.
    pub fn softmax(&self) -> ProbDist {
        let max = self.scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: DVector<f64> = self.scores.map(|s| (s - max).exp());
        let sum = exp.sum();
        ProbDist { probs: exp / sum }
    }
}

/// A probability vector over the vocabulary. Only obtainable from
/// [`LogitVector::softmax`], so entries are in (0, 1] and sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist {
    probs: DVector<f64>,
}

impl ProbDist {
    pub fn probs(&self) -> &DVector<f64> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.len() == 0
    }
}

/// Everything a forward pass exposes: per-position logits, the per-layer
/// vectors entering each editable `w_out` (the key space), and the residual
/// stream after each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub logits: Vec<LogitVector>,
    /// `[layer][position]`, each of length d_ff.
    pub hidden_pre_wout: Vec<Vec<DVector<f64>>>,
    /// `[layer][position]`, residual stream after the layer's MLP.
    pub hidden_post_layer: Vec<Vec<DVector<f64>>>,
}

/// Replaces the MLP output (post-`w_out`, before the residual add) at one
/// (layer, position) during a forward pass.
#[derive(Debug, Clone)]
pub struct Intervention {
    pub layer: usize,
    pub position: usize,
    pub mlp_out: DVector<f64>,
}

/// Full activation record of one forward pass, kept for backpropagation.
pub(crate) struct LayerCache {
    pub x_in: Vec<DVector<f64>>,
    pub inv_rms_attn: Vec<f64>,
    pub q: Vec<DVector<f64>>,
    pub k: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    /// `attn[head][pos]` = softmax weights over positions `0..=pos`.
    pub attn: Vec<Vec<Vec<f64>>>,
    pub x_mid: Vec<DVector<f64>>,
    pub inv_rms_mlp: Vec<f64>,
    pub ff_pre: Vec<DVector<f64>>,
    pub mlp_out: Vec<DVector<f64>>,
    /// Position whose mlp_out was replaced by an intervention, if any.
    pub overridden: Option<usize>,
}

pub(crate) struct Cache {
    pub layers: Vec<LayerCache>,
    pub x_final: Vec<DVector<f64>>,
    pub inv_rms_final: Vec<f64>,
    pub logits: Vec<LogitVector>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub(crate) fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub(crate) fn inv_rms(x: &DVector<f64>) -> f64 {
    1.0 / (x.dot(x) / x.len() as f64 + RMS_EPS).sqrt()
}

/// Fixed sinusoidal position encoding, scaled to the weight-init magnitude.
fn position_encoding(pos: usize, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |i, _| {
        let pair = (i / 2 * 2) as f64;
        let freq = (pos as f64) / 10_000f64.powf(pair / d as f64);
        let raw = if i % 2 == 0 { freq.sin() } else { freq.cos() };
        POS_SCALE * raw
    })
}

fn softmax_slice(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Run the model over `tokens`. Pure and causal: logits at position t depend
/// only on tokens at positions ≤ t, and repeated calls are bit-identical.
pub fn forward(model: &ToyTransformer, tokens: &[TokenId]) -> Result<ForwardTrace, ModelError> {
    forward_with_cache(model, tokens, None).map(|(trace, _)| trace)
}

/// Logits at the final position of `tokens`.
pub fn last_token_logits(
    model: &ToyTransformer,
    tokens: &[TokenId],
) -> Result<LogitVector, ModelError> {
    let trace = forward(model, tokens)?;
    Ok(trace.logits.last().expect("non-empty input").clone())
}

pub(crate) fn forward_with_cache(
    model: &ToyTransformer,
    tokens: &[TokenId],
    intervention: Option<&Intervention>,
) -> Result<(ForwardTrace, Cache), ModelError> {
    model.validate_tokens(tokens)?;
    let cfg = model.config();
    let (d, n_heads, head_dim) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let n = tokens.len();

    if let Some(iv) = intervention {
        if iv.layer >= cfg.n_layers || iv.position >= n {
            return Err(ModelError::BadLocation { layer: iv.layer, index: iv.position });
        }
        if iv.mlp_out.len() != d {
            return Err(ModelError::ShapeError {
                expected: format!("{d}"),
                got: format!("{}", iv.mlp_out.len()),
            });
        }
    }

    let mut x: Vec<DVector<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(t, &id)| model.embed().row(id).transpose() + position_encoding(t, d))
        .collect();

    let mut layer_caches = Vec::with_capacity(cfg.n_layers);
    let mut hidden_pre_wout = Vec::with_capacity(cfg.n_layers);
    let mut hidden_post_layer = Vec::with_capacity(cfg.n_layers);

    for (li, lw) in model.layers().iter().enumerate() {
        let x_in = x;
        let inv_rms_attn: Vec<f64> = x_in.iter().map(inv_rms).collect();
        let xn_attn: Vec<DVector<f64>> =
            x_in.iter().zip(&inv_rms_attn).map(|(v, &r)| v * r).collect();

        let q: Vec<DVector<f64>> = xn_attn.iter().map(|h| &lw.wq * h).collect();
        let k: Vec<DVector<f64>> = xn_attn.iter().map(|h| &lw.wk * h).collect();
        let v: Vec<DVector<f64>> = xn_attn.iter().map(|h| &lw.wv * h).collect();

        let scale = (head_dim as f64).sqrt();
        let mut attn: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n); n_heads];
        let mut ho: Vec<DVector<f64>> = vec![DVector::zeros(d); n];
        for h in 0..n_heads {
            let lo = h * head_dim;
            for t in 0..n {
                let qs = q[t].rows(lo, head_dim);
                let scores: Vec<f64> = (0..=t)
                    .map(|s| qs.dot(&k[s].rows(lo, head_dim)) / scale)
                    .collect();
                let weights = softmax_slice(&scores);
                for i in 0..head_dim {
                    let mut acc = 0.0;
                    for (s, &w) in weights.iter().enumerate() {
                        acc += w * v[s][lo + i];
                    }
                    ho[t][lo + i] = acc;
                }
                attn[h].push(weights);
            }
        }

        let x_mid: Vec<DVector<f64>> =
            x_in.iter().zip(&ho).map(|(xi, h)| xi + &lw.wo * h).collect();

        let inv_rms_mlp: Vec<f64> = x_mid.iter().map(inv_rms).collect();
        let xn_mlp: Vec<DVector<f64>> =
            x_mid.iter().zip(&inv_rms_mlp).map(|(v, &r)| v * r).collect();
        let ff_pre: Vec<DVector<f64>> = xn_mlp.iter().map(|h| &lw.w_in * h).collect();
        let ff_act: Vec<DVector<f64>> = ff_pre.iter().map(|f| f.map(silu)).collect();

        let mut mlp_out: Vec<DVector<f64>> = ff_act.iter().map(|f| &lw.w_out * f).collect();
        let mut overridden = None;
        if let Some(iv) = intervention {
            if iv.layer == li {
                mlp_out[iv.position] = iv.mlp_out.clone();
                overridden = Some(iv.position);
            }
        }

        x = x_mid.iter().zip(&mlp_out).map(|(xm, m)| xm + m).collect();

        hidden_pre_wout.push(ff_act);
        hidden_post_layer.push(x.clone());
        layer_caches.push(LayerCache {
            x_in,
            inv_rms_attn,
            q,
            k,
            v,
            attn,
            x_mid,
            inv_rms_mlp,
            ff_pre,
            mlp_out,
            overridden,
        });
    }

    let inv_rms_final: Vec<f64> = x.iter().map(inv_rms).collect();
    let logits: Vec<LogitVector> = x
        .iter()
        .zip(&inv_rms_final)
        .map(|(v, &r)| LogitVector { scores: model.unembed() * (v * r) })
        .collect();

    let trace = ForwardTrace { logits: logits.clone(), hidden_pre_wout, hidden_post_layer };
    let cache = Cache { layers: layer_caches, x_final: x, inv_rms_final, logits };
    Ok((trace, cache))
}

#[allow(dead_code)]
fn assert_send_sync<T: Send + Sync>() {}
const _: fn() = assert_send_sync::<ToyTransformer>;
