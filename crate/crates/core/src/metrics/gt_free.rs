//! Ground-truth-free specificity: behavioral deviation between the pre- and
//! post-edit models at the query's last token.

use crate::model::{last_token_logits, ProbDist, ToyTransformer};
use crate::par;

use super::MetricError;

/// KL(p ‖ q) in nats. Zero exactly when the distributions are identical.
pub fn kl_divergence(p: &ProbDist, q: &ProbDist) -> f64 {
    p.probs()
        .iter()
        .zip(q.probs().iter())
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

fn check_models(pre: &ToyTransformer, post: &ToyTransformer) -> Result<(), MetricError> {
    if pre.vocab() != post.vocab() {
        return Err(MetricError::ModelMismatch);
    }
    Ok(())
}

/// Mean over queries of KL(pre ‖ post) between the softmaxed last-token
/// logits. The direction is pre-edit first: divergence is measured from the
/// reference behavior.
pub fn kl_specificity(
    pre: &ToyTransformer,
    post: &ToyTransformer,
    queries: &[String],
) -> Result<f64, MetricError> {
    check_models(pre, post)?;
    if queries.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let values = par::map_slice(queries, |query| -> Result<f64, MetricError> {
        let tokens = pre.vocab().tokenize(query)?;
        let p = last_token_logits(pre, &tokens)?.softmax();
        let q = last_token_logits(post, &tokens)?.softmax();
        Ok(kl_divergence(&p, &q))
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_, _>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean top-k support overlap between pre- and post-edit last-token logits,
/// as a percentage. Ties break toward the lowest token id, so both supports
/// have exactly k elements.
pub fn topk_overlap(
    pre: &ToyTransformer,
    post: &ToyTransformer,
    queries: &[String],
    k: usize,
) -> Result<f64, MetricError> {
    check_models(pre, post)?;
    if queries.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let vocab = pre.vocab().len();
    if k == 0 || k > vocab {
        return Err(MetricError::BadK { k, vocab });
    }
    let values = par::map_slice(queries, |query| -> Result<f64, MetricError> {
        let tokens = pre.vocab().tokenize(query)?;
        let a = last_token_logits(pre, &tokens)?.top_k(k);
        let b = last_token_logits(post, &tokens)?.top_k(k);
        let b: std::collections::BTreeSet<_> = b.into_iter().collect();
        let inter = a.iter().filter(|id| b.contains(id)).count();
        Ok(inter as f64 / k as f64)
    });
    let values: Vec<f64> = values.into_iter().collect::<Result<_, _>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64 * 100.0)
}

/// Overlap computed two algebraically equal ways from indicator vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapIdentity {
    /// |A ∩ B| / k.
    pub set_form: f64,
    /// 1 − ‖1_A − 1_B‖₁ / (2k).
    pub l1_form: f64,
}

/// Compute top-k overlap from 0/1 indicator vectors via both the
/// intersection and the L1-distance formulas; the two results are equal
/// exactly.
pub fn overlap_from_indicators(
    a: &[bool],
    b: &[bool],
    k: usize,
) -> Result<OverlapIdentity, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::BadIndicator(format!(
            "length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let pop = |v: &[bool]| v.iter().filter(|&&x| x).count();
    if pop(a) != k || pop(b) != k {
        return Err(MetricError::BadIndicator(format!(
            "expected popcount {k}, got {} and {}",
            pop(a),
            pop(b)
        )));
    }
    let inter = a.iter().zip(b).filter(|(&x, &y)| x && y).count();
    let l1 = a.iter().zip(b).filter(|(&x, &y)| x != y).count();
    // 1 - l1/(2k) evaluated as the single ratio (2k - l1)/(2k), so the two
    // routes agree bit for bit, not just approximately
    Ok(OverlapIdentity {
        set_form: inter as f64 / k as f64,
        l1_form: (2 * k - l1) as f64 / (2 * k) as f64,
    })
}
