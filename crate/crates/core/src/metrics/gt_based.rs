//! Ground-truth specificity metrics: exact decode match, teacher-forced
//! token accuracy, and old-versus-new likelihood comparison.

use serde::{Deserialize, Serialize};

use crate::edit::EditItem;
use crate::model::{greedy_decode, teacher_force_score, TokenId, ToyTransformer};
use crate::par;

use super::MetricError;

/// An annotated answer assumed unique and correct for its query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GroundTruthAnswer {
    text: String,
}

impl GroundTruthAnswer {
    pub fn new(text: impl Into<String>) -> Result<Self, MetricError> {
        let text = text.into();
        if text.is_empty() {
            return Err(MetricError::EmptyAnswer);
        }
        Ok(Self { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

impl TryFrom<String> for GroundTruthAnswer {
    type Error = String;

    fn try_from(text: String) -> Result<Self, Self::Error> {
        GroundTruthAnswer::new(text).map_err(|e| e.to_string())
    }
}

impl From<GroundTruthAnswer> for String {
    fn from(answer: GroundTruthAnswer) -> String {
        answer.text
    }
}

/// A query paired with its ground-truth answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query: String,
    pub answer: GroundTruthAnswer,
}

/// Answer tokens under the metric's normalization: surrounding whitespace is
/// stripped, nothing else.
fn answer_tokens(model: &ToyTransformer, answer: &GroundTruthAnswer) -> Result<Vec<TokenId>, MetricError> {
    Ok(model.vocab().tokenize_continuation(answer.text().trim())?)
}

/// Fraction of items whose greedy decode starts with exactly the tokenized
/// answer (one wrong token fails the sample), as a percentage.
pub fn s_accuracy(model: &ToyTransformer, items: &[LabeledQuery]) -> Result<f64, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let hits = par::map_slice(items, |item| -> Result<bool, MetricError> {
        let query = model.vocab().tokenize(&item.query)?;
        let want = answer_tokens(model, &item.answer)?;
        let decoded = greedy_decode(model, &query, want.len(), model.vocab().eos_id())?;
        Ok(decoded.len() >= want.len() && decoded[..want.len()] == want[..])
    });
    let hits: Vec<bool> = hits.into_iter().collect::<Result<_, _>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64 * 100.0)
}

/// Fraction of answer tokens, pooled across all items, that are top-1 at
/// their teacher-forced position, as a percentage.
pub fn t_accuracy(model: &ToyTransformer, items: &[LabeledQuery]) -> Result<f64, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    let counts = par::map_slice(items, |item| -> Result<(usize, usize), MetricError> {
        let query = model.vocab().tokenize(&item.query)?;
        let answer = answer_tokens(model, &item.answer)?;
        let scored = teacher_force_score(model, &query, &answer)?;
        Ok((scored.iter().filter(|t| t.is_top1).count(), scored.len()))
    });
    let counts: Vec<(usize, usize)> = counts.into_iter().collect::<Result<_, _>>()?;
    let (top1, total) = counts
        .iter()
        .fold((0usize, 0usize), |(a, b), &(x, y)| (a + x, b + y));
    if total == 0 {
        return Err(MetricError::EmptyDataset);
    }
    Ok(top1 as f64 / total as f64 * 100.0)
}

/// Mean per-token log-probability of an answer when teacher-forced on a
/// query; equivalent to comparing by lower cross-entropy.
fn mean_log_prob(
    model: &ToyTransformer,
    query: &[TokenId],
    answer: &[TokenId],
) -> Result<f64, MetricError> {
    let scored = teacher_force_score(model, query, answer)?;
    Ok(scored.iter().map(|t| t.log_prob()).sum::<f64>() / scored.len() as f64)
}

/// Contrastive candidate comparison over each item's neighborhood queries:
/// success when the old answer keeps a higher mean per-token log-probability
/// than the new one (ties count as failure), as a percentage over all
/// (item, neighborhood query) pairs.
pub fn c_accuracy(model: &ToyTransformer, items: &[EditItem]) -> Result<f64, MetricError> {
    if items.is_empty() {
        return Err(MetricError::EmptyDataset);
    }
    for item in items {
        if item.target_old.is_none() || item.neighborhood_queries.is_empty() {
            return Err(MetricError::MissingCounterfactual(item.query.clone()));
        }
    }
    let pairs: Vec<(&EditItem, &String)> = items
        .iter()
        .flat_map(|item| item.neighborhood_queries.iter().map(move |q| (item, q)))
        .collect();
    let outcomes = par::map_slice(&pairs, |(item, neighborhood)| -> Result<bool, MetricError> {
        let vocab = model.vocab();
        let query = vocab.tokenize(neighborhood)?;
        let old = vocab.tokenize_continuation(item.target_old.as_ref().unwrap().trim())?;
        let new = vocab.tokenize_continuation(item.target_new.trim())?;
        Ok(mean_log_prob(model, &query, &old)? > mean_log_prob(model, &query, &new)?)
    });
    let outcomes: Vec<bool> = outcomes.into_iter().collect::<Result<_, _>>()?;
    Ok(outcomes.iter().filter(|&&ok| ok).count() as f64 / outcomes.len() as f64 * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::greedy_decode;
    use crate::testutil::tiny_model;

    fn labeled(model: &ToyTransformer, queries: &[&str], n_tokens: usize) -> Vec<LabeledQuery> {
        // answers = the model's own greedy continuations
        queries
            .iter()
            .map(|q| {
                let tokens = model.vocab().tokenize(q).unwrap();
                let decoded = greedy_decode(model, &tokens, n_tokens, None).unwrap();
                LabeledQuery {
                    query: q.to_string(),
                    answer: GroundTruthAnswer::new(model.vocab().detokenize(&decoded)).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn self_consistent_answers_score_100() {
        let model = tiny_model(5);
        let items = labeled(&model, &["alice works at", "bob lives in", "carol works at"], 2);
        // keep items whose decode text survives the metric's trim
        // normalization and re-tokenizes to the same ids
        let items: Vec<_> = items
            .into_iter()
            .filter(|it| {
                let tokens = model.vocab().tokenize(&it.query).unwrap();
                let decoded = greedy_decode(&model, &tokens, 2, None).unwrap();
                model
                    .vocab()
                    .tokenize_continuation(it.answer.text().trim())
                    .map(|ids| ids == decoded)
                    .unwrap_or(false)
            })
            .collect();
        if items.is_empty() {
            return;
        }
        assert_eq!(s_accuracy(&model, &items).unwrap(), 100.0);
        assert_eq!(t_accuracy(&model, &items).unwrap(), 100.0);
    }

    #[test]
    fn unknown_answers_score_zero() {
        let model = tiny_model(5);
        let items = vec![LabeledQuery {
            query: "alice works at".into(),
            answer: GroundTruthAnswer::new("@@@@").unwrap(),
        }];
        assert_eq!(s_accuracy(&model, &items).unwrap(), 0.0);
    }

    #[test]
    fn s_accuracy_is_never_above_t_accuracy() {
        let model = tiny_model(5);
        // mix of matching and mismatching answers
        let mut items = labeled(&model, &["alice works at"], 2);
        items.push(LabeledQuery {
            query: "bob lives in".into(),
            answer: GroundTruthAnswer::new("acme corp").unwrap(),
        });
        items.push(LabeledQuery {
            query: "carol works at".into(),
            answer: GroundTruthAnswer::new("globex labs").unwrap(),
        });
        let s = s_accuracy(&model, &items).unwrap();
        let t = t_accuracy(&model, &items).unwrap();
        assert!(s <= t, "s {s} > t {t}");
    }

    #[test]
    fn equal_old_and_new_answers_fail_by_tie_rule() {
        let model = tiny_model(5);
        let items = vec![EditItem {
            query: "alice works at".into(),
            target_new: "acme corp".into(),
            target_old: Some("acme corp".into()),
            decisive_index: None,
            paraphrases: vec![],
            neighborhood_queries: vec!["bob works at".into()],
        }];
        assert_eq!(c_accuracy(&model, &items).unwrap(), 0.0);
    }

    #[test]
    fn missing_counterfactual_fields_are_rejected() {
        let model = tiny_model(5);
        let items = vec![EditItem {
            query: "alice works at".into(),
            target_new: "acme corp".into(),
            target_old: None,
            decisive_index: None,
            paraphrases: vec![],
            neighborhood_queries: vec!["bob works at".into()],
        }];
        assert!(matches!(
            c_accuracy(&model, &items),
            Err(MetricError::MissingCounterfactual(_))
        ));
    }

    #[test]
    fn c_accuracy_matches_per_token_product_oracle() {
        // Oracle route: per-token probabilities from separate incremental
        // forwards, multiplied into sequence probabilities, compared via
        // geometric mean (same comparison as mean log-probability).
        let model = tiny_model(5);
        let items: Vec<EditItem> = [
            ("alice works at", "acme corp", "globex labs", "bob works at"),
            ("carol lives in", "acme labs", "globex corp", "alice lives in"),
        ]
        .iter()
        .map(|(q, new, old, n)| EditItem {
            query: q.to_string(),
            target_new: new.to_string(),
            target_old: Some(old.to_string()),
            decisive_index: None,
            paraphrases: vec![],
            neighborhood_queries: vec![n.to_string()],
        })
        .collect();

        let got = c_accuracy(&model, &items).unwrap();

        let vocab = model.vocab();
        let mut successes = 0usize;
        let mut total = 0usize;
        for item in &items {
            for neighborhood in &item.neighborhood_queries {
                let base = vocab.tokenize(neighborhood).unwrap();
                let product = |answer: &str| -> f64 {
                    let ids = vocab.tokenize_continuation(answer).unwrap();
                    let mut prefix = base.clone();
                    let mut p = 1.0;
                    for &id in &ids {
                        let logits = crate::model::last_token_logits(&model, &prefix).unwrap();
                        p *= logits.softmax().probs()[id];
                        prefix.push(id);
                    }
                    p.powf(1.0 / ids.len() as f64)
                };
                let old = product(item.target_old.as_ref().unwrap());
                let new = product(&item.target_new);
                if old > new {
                    successes += 1;
                }
                total += 1;
            }
        }
        let want = successes as f64 / total as f64 * 100.0;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}
