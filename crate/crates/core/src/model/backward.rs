//! Reverse-mode gradient of a teacher-forced answer objective with respect
//! to an injected MLP output.
//!
//! The objective is the sum of answer-token log-probabilities under a single
//! forward pass over query‖answer, with the MLP output at one
//! (layer, position) replaced by a free vector z. The gradient here is the
//! analytic one; it is cross-checked against central finite differences in
//! the tests.

use nalgebra::DVector;

use super::forward::{forward_with_cache, silu_prime, Cache, Intervention};
use super::{ModelError, TokenId, ToyTransformer};

pub(crate) struct ObjectiveEval {
    /// Sum over answer positions of log P(answer_t | forced prefix).
    pub log_prob: f64,
    /// True when every answer token is the argmax at its position.
    pub all_top1: bool,
    /// d(log_prob)/d(logits) per position; None where no answer token sits.
    pub dlogits: Vec<Option<DVector<f64>>>,
    pub cache: Cache,
}

/// Evaluate the answer objective on `tokens = query ‖ answer`, optionally
/// under an intervention.
pub(crate) fn answer_objective_with_cache(
    model: &ToyTransformer,
    tokens: &[TokenId],
    query_len: usize,
    intervention: Option<&Intervention>,
) -> Result<ObjectiveEval, ModelError> {
    if query_len == 0 || query_len >= tokens.len() {
        return Err(ModelError::BadLocation { layer: 0, index: query_len });
    }
    let (_, cache) = forward_with_cache(model, tokens, intervention)?;

    let mut log_prob = 0.0;
    let mut all_top1 = true;
    let mut dlogits: Vec<Option<DVector<f64>>> = vec![None; tokens.len()];
    for (i, &target) in tokens[query_len..].iter().enumerate() {
        let pos = query_len - 1 + i;
        let logits = &cache.logits[pos];
        let probs = logits.softmax();
        log_prob += probs.probs()[target].ln();
        all_top1 &= logits.argmax() == target;
        let mut grad = -probs.probs().clone();
        grad[target] += 1.0;
        dlogits[pos] = Some(grad);
    }
    Ok(ObjectiveEval { log_prob, all_top1, dlogits, cache })
}

fn rmsnorm_bwd(dy: &DVector<f64>, x: &DVector<f64>, r: f64) -> DVector<f64> {
    let n = x.len() as f64;
    let dot = dy.dot(x);
    dy * r - x * (r * r * r * dot / n)
}

/// Backpropagate `dlogits` to the intervention's replaced MLP output.
/// The cache must come from a forward pass whose intervention sat at
/// `target_layer`.
pub(crate) fn grad_wrt_intervention(
    model: &ToyTransformer,
    cache: &Cache,
    target_layer: usize,
    dlogits: &[Option<DVector<f64>>],
) -> DVector<f64> {
    let cfg = model.config();
    let (d, n_heads, head_dim) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let n = cache.x_final.len();
    let scale = (head_dim as f64).sqrt();

    // unembedding and final norm
    let mut dx: Vec<DVector<f64>> = vec![DVector::zeros(d); n];
    for (p, dl) in dlogits.iter().enumerate() {
        if let Some(dl) = dl {
            let d_xn = model.unembed().tr_mul(dl);
            dx[p] += rmsnorm_bwd(&d_xn, &cache.x_final[p], cache.inv_rms_final[p]);
        }
    }

    let mut grad_z = DVector::zeros(d);

    for (li, lc) in cache.layers.iter().enumerate().rev() {
        let lw = &model.layers()[li];

        // MLP sublayer: x_out = x_mid + mlp_out(xn(x_mid)); an override cuts
        // the path through w_out at that position and routes into grad_z.
        let mut dx_mid: Vec<DVector<f64>> = Vec::with_capacity(n);
        for p in 0..n {
            if li == target_layer && lc.overridden == Some(p) {
                grad_z += &dx[p];
                dx_mid.push(dx[p].clone());
                continue;
            }
            let d_ff_act = lw.w_out.tr_mul(&dx[p]);
            let d_ff_pre = DVector::from_fn(d_ff_act.len(), |i, _| {
                d_ff_act[i] * silu_prime(lc.ff_pre[p][i])
            });
            let d_xn = lw.w_in.tr_mul(&d_ff_pre);
            dx_mid.push(&dx[p] + rmsnorm_bwd(&d_xn, &lc.x_mid[p], lc.inv_rms_mlp[p]));
        }

        // attention sublayer: x_mid = x_in + wo * ho(xn(x_in, all positions))
        let mut dq: Vec<DVector<f64>> = vec![DVector::zeros(d); n];
        let mut dk: Vec<DVector<f64>> = vec![DVector::zeros(d); n];
        let mut dv: Vec<DVector<f64>> = vec![DVector::zeros(d); n];
        let dho: Vec<DVector<f64>> = dx_mid.iter().map(|g| lw.wo.tr_mul(g)).collect();

        for h in 0..n_heads {
            let lo = h * head_dim;
            for p in 0..n {
                let weights = &lc.attn[h][p];
                let d_oh = dho[p].rows(lo, head_dim);
                // d/d(weights) and accumulate into values
                let mut d_aw = vec![0.0; p + 1];
                for s in 0..=p {
                    d_aw[s] = d_oh.dot(&lc.v[s].rows(lo, head_dim));
                    for i in 0..head_dim {
                        dv[s][lo + i] += weights[s] * d_oh[i];
                    }
                }
                // softmax backward over the row
                let inner: f64 = d_aw.iter().zip(weights).map(|(g, w)| g * w).sum();
                for s in 0..=p {
                    let d_score = weights[s] * (d_aw[s] - inner);
                    for i in 0..head_dim {
                        dq[p][lo + i] += d_score * lc.k[s][lo + i] / scale;
                        dk[s][lo + i] += d_score * lc.q[p][lo + i] / scale;
                    }
                }
            }
        }

        let mut dx_in: Vec<DVector<f64>> = Vec::with_capacity(n);
        for p in 0..n {
            let d_xn = lw.wq.tr_mul(&dq[p]) + lw.wk.tr_mul(&dk[p]) + lw.wv.tr_mul(&dv[p]);
            dx_in.push(&dx_mid[p] + rmsnorm_bwd(&d_xn, &lc.x_in[p], lc.inv_rms_attn[p]));
        }
        dx = dx_in;
    }

    grad_z
}

/// Objective value and analytic gradient of the teacher-forced answer
/// log-probability with respect to the vector `z` substituted for the MLP
/// output at (`layer`, `position`).
pub fn objective_and_gradient(
    model: &ToyTransformer,
    query_tokens: &[TokenId],
    answer_tokens: &[TokenId],
    layer: usize,
    position: usize,
    z: &DVector<f64>,
) -> Result<(f64, DVector<f64>), ModelError> {
    if answer_tokens.is_empty() || query_tokens.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mut tokens = query_tokens.to_vec();
    tokens.extend_from_slice(answer_tokens);
    let iv = Intervention { layer, position, mlp_out: z.clone() };
    let eval = answer_objective_with_cache(model, &tokens, query_tokens.len(), Some(&iv))?;
    let grad = grad_wrt_intervention(model, &eval.cache, layer, &eval.dlogits);
    Ok((eval.log_prob, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::tiny_model_with;
    use crate::ModelConfig;

    fn finite_difference_grad(
        model: &ToyTransformer,
        query: &[TokenId],
        answer: &[TokenId],
        layer: usize,
        position: usize,
        z: &DVector<f64>,
        h: f64,
    ) -> DVector<f64> {
        let mut grad = DVector::zeros(z.len());
        for i in 0..z.len() {
            let mut plus = z.clone();
            plus[i] += h;
            let mut minus = z.clone();
            minus[i] -= h;
            let (lp, _) =
                objective_and_gradient(model, query, answer, layer, position, &plus).unwrap();
            let (lm, _) =
                objective_and_gradient(model, query, answer, layer, position, &minus).unwrap();
            grad[i] = (lp - lm) / (2.0 * h);
        }
        grad
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let cfg = ModelConfig { d_model: 16, n_layers: 3, n_heads: 2, max_seq: 12, seed: 3 };
        let model = tiny_model_with(cfg);
        let query = vec![0usize, 3, 5];
        let answer = vec![4usize, 6];
        let z = DVector::from_fn(16, |i, _| 0.05 * ((i as f64) + 0.3).sin());

        for layer in [0usize, 1] {
            let (_, analytic) =
                objective_and_gradient(&model, &query, &answer, layer, 2, &z).unwrap();
            let numeric =
                finite_difference_grad(&model, &query, &answer, layer, 2, &z, 1e-4);
            let rel = (analytic.clone() - &numeric).norm() / numeric.norm();
            assert!(rel <= 1e-4, "layer {layer}: relative gradient error {rel}");
        }
    }

    #[test]
    fn gradient_is_zero_when_answer_unreachable() {
        // Intervening at the final position of the full sequence cannot
        // influence any answer logit (they sit at earlier positions), except
        // the last answer token position itself predicts nothing further.
        let cfg = ModelConfig { d_model: 16, n_layers: 2, n_heads: 2, max_seq: 12, seed: 3 };
        let model = tiny_model_with(cfg);
        let query = vec![0usize, 3];
        let answer = vec![4usize];
        // position 2 is the answer token's own position; its logits are never
        // scored, so the objective cannot depend on z there.
        let z = DVector::from_element(16, 0.2);
        let (_, grad) = objective_and_gradient(&model, &query, &answer, 1, 2, &z).unwrap();
        assert!(grad.norm() < 1e-14, "grad norm {}", grad.norm());
    }
}
