//! Bundled fixture datasets over a fixed toy vocabulary.
//!
//! The generators probe a concrete model so the datasets have controlled
//! relationships to its behavior: a known fraction of preservation answers
//! agree with the model's own decodes, counterfactual targets are guaranteed
//! to disagree with the pre-edit decode, and the inconsistency fixture is
//! built so teacher forcing scores tokens as correct on queries whose facts
//! the model does not hold. Everything is deterministic in (model, seed).

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::edit::{EditItem, PreservationQuery};
use crate::metrics::GroundTruthAnswer;
use crate::model::{
    greedy_decode, last_token_logits, ModelConfig, TokenId, ToyTransformer, Vocab,
};

use super::dataset::{Dataset, DatasetKind, EditRecord, PreservationRecord};
use super::split::{ConsistencyJudge, ContainmentJudge};
use super::HarnessError;

const SUBJECTS: &[&str] = &[
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy", "karl",
    "lena", "mira", "nora", "oscar", "peggy", "quinn", "rosa", "sam", "tina", "ursula", "victor",
    "wendy", "xavier", "yara", "zane", "astrid", "boris", "clara", "dmitri", "elsa", "felix",
    "gina", "hugo", "iris", "jonas", "kira", "leo", "mara", "nils", "olga", "pavel", "rita",
    "sven", "tara", "ulric", "vera", "wim", "yuri", "zelda", "bruno", "celia", "dora", "edgar",
    "flora", "gustav", "hanna", "ingrid", "jasper", "nadia", "omar", "petra", "quentin", "ruth",
    "stefan", "thea", "uma", "viktor", "willa", "xenia", "yosef", "zoe", "anders", "bianca",
    "casper", "delia", "emil", "freya", "gideon", "hilda",
];

const RELATIONS: &[&str] = &[" works at", " lives in", " was born in", " studies", " leads"];

const RELATION_PARAPHRASES: &[&str] =
    &[" is employed by", " resides in", " originates from", " majors in", " manages"];

const OBJECT_HEADS: &[&str] = &[
    "acme", "globex", "initech", "umbrella", "hooli", "aperture", "cyberdyne", "tyrell", "wayne",
    "stark", "wonka", "oscorp", "zorg", "vandelay", "dunder", "pied", "monarch", "soylent",
    "virtucon", "gringotts", "weyland", "nakatomi", "duff", "sirius",
];

const OBJECT_TAILS: &[&str] = &[
    " corp", " inc", " labs", " group", " systems", " tech", " industries", " partners",
    " holdings", " international", " ventures", " logistics",
];

/// Number of edit items in the bundled counterfactual/factual fixtures.
pub const FIXTURE_EDIT_COUNT: usize = 64;
/// Number of preservation queries in the bundled fixtures.
pub const FIXTURE_PRESERVATION_COUNT: usize = 128;
/// Preservation answers matching the model's own decode (one quarter).
pub const FIXTURE_CONSISTENT_COUNT: usize = FIXTURE_PRESERVATION_COUNT / 4;
/// Consistency-fixture sizes: one third consistent, two thirds not.
pub const INCONSISTENCY_CONSISTENT: usize = 16;
pub const INCONSISTENCY_INCONSISTENT: usize = 32;

/// The fixed toy vocabulary all fixtures share.
pub fn toy_vocab() -> Vocab {
    let mut tokens: Vec<String> =
        vec!["<bos>".into(), "<unk>".into(), "<eos>".into()];
    for group in [SUBJECTS, RELATIONS, RELATION_PARAPHRASES, OBJECT_HEADS, OBJECT_TAILS] {
        tokens.extend(group.iter().map(|s| s.to_string()));
    }
    Vocab::new(tokens).expect("static inventory is a valid vocabulary")
}

/// The default fixed-seed model over the toy vocabulary.
pub fn default_model() -> ToyTransformer {
    ToyTransformer::new(ModelConfig::default(), toy_vocab())
        .expect("default config is valid")
}

struct FixtureRng(ChaCha8Rng);

impl FixtureRng {
    fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }

    fn shuffled(&mut self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, self.below(i + 1));
        }
        order
    }
}

/// A probed query: its text, tokens, and its two-token decode.
struct Probe {
    subject: usize,
    relation: usize,
    text: String,
    tokens: Vec<TokenId>,
    decode: Vec<TokenId>,
    decode_text: String,
}

fn err(message: impl Into<String>) -> HarnessError {
    HarnessError::Config(message.into())
}

fn probe_query(
    model: &ToyTransformer,
    subject: usize,
    relation: usize,
) -> Result<Probe, HarnessError> {
    let vocab = model.vocab();
    let text = format!("{}{}", SUBJECTS[subject], RELATIONS[relation]);
    let tokens = vocab.tokenize(&text)?;
    let decode = greedy_decode(model, &tokens, 2, None)?;
    let decode_text = vocab.detokenize(&decode);
    Ok(Probe { subject, relation, text, tokens, decode, decode_text })
}

/// Whether a probe's decode can serve as an annotated answer: two
/// non-special tokens whose concatenated text survives the metrics' trim
/// normalization and re-tokenizes to the same ids.
fn decode_is_answer_grade(vocab: &Vocab, probe: &Probe) -> bool {
    probe.decode.len() == 2
        && !probe.decode.iter().any(|&id| vocab.is_special(id))
        && probe.decode_text.trim() == probe.decode_text
        && vocab
            .tokenize_continuation(&probe.decode_text)
            .map(|ids| ids == probe.decode)
            .unwrap_or(false)
}

/// Pick a counterfactual single-token edit target for `probe`: a head token
/// that differs from the decode's first token (and from `avoid`). The scan
/// starts at a per-item offset so targets spread over the head inventory.
fn single_token_target(
    vocab: &Vocab,
    probe: &Probe,
    head_order: &[usize],
    start: usize,
    avoid: Option<TokenId>,
) -> Option<String> {
    for step in 0..head_order.len() {
        let head = head_order[(start + step) % head_order.len()];
        let id = vocab.id_of(OBJECT_HEADS[head]).expect("inventory token");
        if id != probe.decode[0] && Some(id) != avoid {
            return Some(OBJECT_HEADS[head].to_string());
        }
    }
    None
}

/// Pick a two-token answer whose first token the model would not decode but
/// whose second token is the model's own argmax after forcing the first:
/// exact decoding never matches it, teacher forcing scores half its tokens
/// as correct.
fn biased_two_token_answer(
    model: &ToyTransformer,
    probe: &Probe,
    head_order: &[usize],
    start: usize,
) -> Result<Option<String>, HarnessError> {
    let vocab = model.vocab();
    for step in 0..head_order.len() {
        let head = head_order[(start + step) % head_order.len()];
        let first = vocab.id_of(OBJECT_HEADS[head]).expect("inventory token");
        if first == probe.decode[0] {
            continue;
        }
        let mut forced = probe.tokens.clone();
        forced.push(first);
        let second = last_token_logits(model, &forced)?.argmax();
        if vocab.is_special(second) {
            continue;
        }
        let text = format!(
            "{}{}",
            vocab.token(first).unwrap(),
            vocab.token(second).unwrap()
        );
        if vocab.tokenize_continuation(&text)? != vec![first, second] {
            continue;
        }
        return Ok(Some(text));
    }
    Ok(None)
}

struct ComboStream {
    order: Vec<(usize, usize)>,
    next: usize,
}

impl ComboStream {
    fn new(rng: &mut FixtureRng) -> Self {
        let combos: Vec<(usize, usize)> = (0..SUBJECTS.len())
            .flat_map(|s| (0..RELATIONS.len()).map(move |r| (s, r)))
            .collect();
        let order = rng.shuffled(combos.len()).into_iter().map(|i| combos[i]).collect();
        Self { order, next: 0 }
    }

    fn take(&mut self, used: &mut std::collections::HashSet<(usize, usize)>) -> Option<(usize, usize)> {
        while self.next < self.order.len() {
            let combo = self.order[self.next];
            self.next += 1;
            if used.insert(combo) {
                return Some(combo);
            }
        }
        None
    }
}

fn build_edit_items(
    model: &ToyTransformer,
    rng: &mut FixtureRng,
    combos: &mut ComboStream,
    used: &mut std::collections::HashSet<(usize, usize)>,
    with_counterfactual: bool,
) -> Result<Vec<EditRecord>, HarnessError> {
    let subject_order = rng.shuffled(SUBJECTS.len());
    let head_order = rng.shuffled(OBJECT_HEADS.len());
    let mut records = Vec::with_capacity(FIXTURE_EDIT_COUNT);

    while records.len() < FIXTURE_EDIT_COUNT {
        let (subject, relation) =
            combos.take(used).ok_or_else(|| err("ran out of subject/relation combos"))?;
        let probe = probe_query(model, subject, relation)?;

        // neighborhood query: a fresh subject under the same relation, whose
        // own decode is answer-grade (it becomes target_old)
        let neighborhood = if with_counterfactual {
            let mut found = None;
            for &s2 in &subject_order {
                if s2 == subject || used.contains(&(s2, relation)) {
                    continue;
                }
                let p2 = probe_query(model, s2, relation)?;
                if decode_is_answer_grade(model.vocab(), &p2) {
                    used.insert((s2, relation));
                    found = Some(p2);
                    break;
                }
            }
            match found {
                Some(p2) => p2,
                None => continue,
            }
        } else {
            // factual fixtures carry no neighborhood; reuse the probe slot
            Probe {
                subject,
                relation,
                text: String::new(),
                tokens: vec![],
                decode: probe.decode.clone(),
                decode_text: String::new(),
            }
        };

        let avoid = with_counterfactual.then(|| neighborhood.decode[0]);
        let Some(target_new) =
            single_token_target(model.vocab(), &probe, &head_order, records.len(), avoid)
        else {
            continue;
        };

        let item = EditItem {
            query: probe.text.clone(),
            target_new,
            target_old: with_counterfactual.then(|| neighborhood.decode_text.clone()),
            decisive_index: None,
            paraphrases: vec![format!(
                "{}{}",
                SUBJECTS[probe.subject], RELATION_PARAPHRASES[probe.relation]
            )],
            neighborhood_queries: if with_counterfactual {
                vec![neighborhood.text.clone()]
            } else {
                vec![]
            },
        };
        records.push(EditRecord { id: format!("edit-{:03}", records.len()), item });
    }
    Ok(records)
}

fn build_preservation(
    model: &ToyTransformer,
    combos: &mut ComboStream,
    used: &mut std::collections::HashSet<(usize, usize)>,
) -> Result<Vec<PreservationRecord>, HarnessError> {
    let mut probes = Vec::with_capacity(FIXTURE_PRESERVATION_COUNT);
    while probes.len() < FIXTURE_PRESERVATION_COUNT {
        let (subject, relation) =
            combos.take(used).ok_or_else(|| err("ran out of preservation combos"))?;
        let probe = probe_query(model, subject, relation)?;
        if decode_is_answer_grade(model.vocab(), &probe) {
            probes.push(probe);
        }
    }

    let mismatch_count = FIXTURE_PRESERVATION_COUNT - FIXTURE_CONSISTENT_COUNT;
    let mut records = Vec::with_capacity(FIXTURE_PRESERVATION_COUNT);
    for (i, probe) in probes.iter().enumerate() {
        let answer = if i < FIXTURE_CONSISTENT_COUNT {
            probe.decode_text.clone()
        } else {
            // borrow another query's decode so the annotation disagrees with
            // this query's own behavior
            let group = i - FIXTURE_CONSISTENT_COUNT;
            let mut donor = None;
            for step in 1..mismatch_count {
                let candidate =
                    &probes[FIXTURE_CONSISTENT_COUNT + (group + step) % mismatch_count];
                if candidate.decode[0] != probe.decode[0] {
                    donor = Some(candidate.decode_text.clone());
                    break;
                }
            }
            donor.ok_or_else(|| err("could not find a mismatching donor answer"))?
        };
        records.push(PreservationRecord {
            id: format!("pres-{:03}", i),
            query: PreservationQuery { query: probe.text.clone(), decisive_index: None },
            gt_answer: Some(
                GroundTruthAnswer::new(answer).map_err(|e| err(e.to_string()))?,
            ),
        });
    }
    Ok(records)
}

/// Counterfactual fixture: edit targets contradict the model's decodes, each
/// item carries a target_old (the neighborhood query's own decode) and one
/// paraphrase; a quarter of preservation answers match the model.
pub fn generate_counterfactual(
    model: &ToyTransformer,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    let mut rng = FixtureRng::new(seed);
    let mut combos = ComboStream::new(&mut rng);
    let mut used = std::collections::HashSet::new();
    let edits = build_edit_items(model, &mut rng, &mut combos, &mut used, true)?;
    let preservation = build_preservation(model, &mut combos, &mut used)?;
    Dataset::new("toy-counterfactual".into(), DatasetKind::Counterfactual, edits, preservation)
}

/// Factual fixture: same construction without counterfactual companions.
pub fn generate_factual(model: &ToyTransformer, seed: u64) -> Result<Dataset, HarnessError> {
    let mut rng = FixtureRng::new(seed);
    let mut combos = ComboStream::new(&mut rng);
    let mut used = std::collections::HashSet::new();
    let edits = build_edit_items(model, &mut rng, &mut combos, &mut used, false)?;
    let preservation = build_preservation(model, &mut combos, &mut used)?;
    Dataset::new("toy-factual".into(), DatasetKind::Factual, edits, preservation)
}

/// Consistency fixture: 16 queries whose annotated answer is the model's own
/// decode and 32 whose answer starts with a token the model would not
/// produce but continues with the model's forced argmax, so teacher forcing
/// still scores half the tokens as correct while exact decoding never does.
/// Ids carry the intended split (`con-*` / `inc-*`).
pub fn generate_inconsistency(
    model: &ToyTransformer,
    seed: u64,
) -> Result<Dataset, HarnessError> {
    let judge = ContainmentJudge::default();
    let mut rng = FixtureRng::new(seed);
    let mut combos = ComboStream::new(&mut rng);
    let mut used = std::collections::HashSet::new();
    let head_order = rng.shuffled(OBJECT_HEADS.len());

    let mut consistent = Vec::with_capacity(INCONSISTENCY_CONSISTENT);
    while consistent.len() < INCONSISTENCY_CONSISTENT {
        let (subject, relation) =
            combos.take(&mut used).ok_or_else(|| err("ran out of combos"))?;
        let probe = probe_query(model, subject, relation)?;
        if !decode_is_answer_grade(model.vocab(), &probe) {
            continue;
        }
        let answer = GroundTruthAnswer::new(probe.decode_text.clone())
            .map_err(|e| err(e.to_string()))?;
        if !judge.is_consistent(model, &probe.text, &answer)? {
            continue;
        }
        consistent.push(PreservationRecord {
            id: format!("con-{:02}", consistent.len()),
            query: PreservationQuery { query: probe.text, decisive_index: None },
            gt_answer: Some(answer),
        });
    }

    let mut inconsistent = Vec::with_capacity(INCONSISTENCY_INCONSISTENT);
    while inconsistent.len() < INCONSISTENCY_INCONSISTENT {
        let (subject, relation) =
            combos.take(&mut used).ok_or_else(|| err("ran out of combos"))?;
        let probe = probe_query(model, subject, relation)?;
        let Some(text) =
            biased_two_token_answer(model, &probe, &head_order, inconsistent.len())?
        else {
            continue;
        };
        let answer = GroundTruthAnswer::new(text).map_err(|e| err(e.to_string()))?;
        if judge.is_consistent(model, &probe.text, &answer)? {
            continue;
        }
        inconsistent.push(PreservationRecord {
            id: format!("inc-{:02}", inconsistent.len()),
            query: PreservationQuery { query: probe.text, decisive_index: None },
            gt_answer: Some(answer),
        });
    }

    let mut records = consistent;
    records.extend(inconsistent);
    Dataset::new("toy-inconsistency".into(), DatasetKind::Factual, vec![], records)
}
