//! Teacher-forced answer scoring and greedy decoding.

use super::forward::forward;
use super::{ModelError, TokenId, ToyTransformer};

/// Score of one answer token under teacher forcing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherForcedToken {
    /// P(answer_t | query, answer_<t).
    pub probability: f64,
    /// Whether the token is the argmax at its position (ties break toward
    /// the lowest token id).
    pub is_top1: bool,
}

impl TeacherForcedToken {
    pub fn log_prob(&self) -> f64 {
        self.probability.ln()
    }
}

/// One forward pass over query‖answer; position t of the answer reports the
/// forced probability of answer_t and whether it is top-1 there.
pub fn teacher_force_score(
    model: &ToyTransformer,
    query_tokens: &[TokenId],
    answer_tokens: &[TokenId],
) -> Result<Vec<TeacherForcedToken>, ModelError> {
    if query_tokens.is_empty() || answer_tokens.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mut tokens = query_tokens.to_vec();
    tokens.extend_from_slice(answer_tokens);
    let trace = forward(model, &tokens)?;
    Ok(answer_tokens
        .iter()
        .enumerate()
        .map(|(i, &target)| {
            let logits = &trace.logits[query_tokens.len() - 1 + i];
            TeacherForcedToken {
                probability: logits.softmax().probs()[target],
                is_top1: logits.argmax() == target,
            }
        })
        .collect())
}

/// Deterministic argmax decoding. Emits up to `max_new` tokens; a decoded
/// stop token is emitted and then halts generation.
pub fn greedy_decode(
    model: &ToyTransformer,
    query_tokens: &[TokenId],
    max_new: usize,
    stop_token: Option<TokenId>,
) -> Result<Vec<TokenId>, ModelError> {
    if query_tokens.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mut tokens = query_tokens.to_vec();
    let mut decoded = Vec::with_capacity(max_new);
    for _ in 0..max_new {
        if tokens.len() >= model.config().max_seq {
            break;
        }
        let trace = forward(model, &tokens)?;
        let next = trace.logits.last().expect("non-empty").argmax();
        decoded.push(next);
        tokens.push(next);
        if stop_token == Some(next) {
            break;
        }
    }
    Ok(decoded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::last_token_logits;
    use crate::testutil::tiny_model;

    #[test]
    fn single_answer_token_probability_is_definitional() {
        let model = tiny_model(5);
        let query = vec![0usize, 3, 5];
        let answer = vec![4usize];
        let scored = teacher_force_score(&model, &query, &answer).unwrap();
        let probs = last_token_logits(&model, &query).unwrap().softmax();
        assert_eq!(scored.len(), 1);
        assert_eq!(scored[0].probability, probs.probs()[4]);
    }

    #[test]
    fn forced_probabilities_match_incremental_autoregressive_oracle() {
        // Oracle: one forward per answer position, each with the forced
        // prefix appended token by token.
        let model = tiny_model(5);
        let query = vec![0usize, 3, 5];
        let answer = vec![4usize, 6, 3];
        let scored = teacher_force_score(&model, &query, &answer).unwrap();

        let mut prefix = query.clone();
        for (i, &tok) in answer.iter().enumerate() {
            let logits = last_token_logits(&model, &prefix).unwrap();
            let p = logits.softmax().probs()[tok];
            assert!(
                (scored[i].probability - p).abs() < 1e-15,
                "position {i}: {} vs {p}",
                scored[i].probability
            );
            assert_eq!(scored[i].is_top1, logits.argmax() == tok);
            prefix.push(tok);
        }
    }

    #[test]
    fn per_token_product_is_sequence_probability() {
        let model = tiny_model(5);
        let query = vec![0usize, 3, 5];
        let answer = vec![4usize, 6];
        let scored = teacher_force_score(&model, &query, &answer).unwrap();
        let product: f64 = scored.iter().map(|t| t.probability).product();
        let log_sum: f64 = scored.iter().map(|t| t.log_prob()).sum();
        assert!((product.ln() - log_sum).abs() < 1e-12);
    }

    #[test]
    fn decode_of_one_token_is_argmax() {
        let model = tiny_model(5);
        let query = vec![0usize, 3, 5];
        let decoded = greedy_decode(&model, &query, 1, None).unwrap();
        assert_eq!(decoded, vec![last_token_logits(&model, &query).unwrap().argmax()]);
    }

    #[test]
    fn decoding_twice_is_identical() {
        let model = tiny_model(5);
        let query = vec![0usize, 3, 5];
        let a = greedy_decode(&model, &query, 6, None).unwrap();
        let b = greedy_decode(&model, &query, 6, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_decoded_token_is_top1_under_teacher_forcing() {
        let model = tiny_model(5);
        let query = vec![0usize, 3, 5];
        let decoded = greedy_decode(&model, &query, 1, None).unwrap();
        let scored = teacher_force_score(&model, &query, &decoded).unwrap();
        assert!(scored[0].is_top1);
    }

    #[test]
    fn overflow_is_rejected() {
        let model = tiny_model(5);
        let query = vec![0usize; model.config().max_seq];
        assert!(matches!(
            teacher_force_score(&model, &query, &[3]),
            Err(ModelError::SeqTooLong { .. })
        ));
    }
}
