//! Token vocabulary and the greedy longest-match tokenizer.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Index into a [`Vocab`].
pub type TokenId = usize;

/// Reserved sequence-start marker, prepended to every tokenized query.
pub const BOS_TOKEN: &str = "<bos>";
/// Reserved marker for spans of text no vocabulary token matches.
pub const UNK_TOKEN: &str = "<unk>";
/// Optional stop marker recognized by greedy decoding.
pub const EOS_TOKEN: &str = "<eos>";

/// An ordered list of distinct token strings with a reserved BOS and UNK
/// marker. Token ids are positions in the list, so the token↔id map is a
/// bijection over `[0, len)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    bos: TokenId,
    unk: TokenId,
    eos: Option<TokenId>,
}

impl Vocab {
    /// Build a vocabulary from an ordered token list.
    ///
    /// Requires at least 4 tokens, all distinct and non-empty, including the
    /// `<bos>` and `<unk>` markers (`<eos>` is optional).
    pub fn new(tokens: Vec<String>) -> Result<Self, ModelError> {
        if tokens.len() < 4 {
            return Err(ModelError::InvalidVocab(format!(
                "need at least 4 tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(ModelError::InvalidVocab(format!("token {id} is empty")));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(ModelError::InvalidVocab(format!("duplicate token {tok:?}")));
            }
        }
        let bos = *index
            .get(BOS_TOKEN)
            .ok_or_else(|| ModelError::InvalidVocab(format!("missing {BOS_TOKEN} marker")))?;
        let unk = *index
            .get(UNK_TOKEN)
            .ok_or_else(|| ModelError::InvalidVocab(format!("missing {UNK_TOKEN} marker")))?;
        let eos = index.get(EOS_TOKEN).copied();
        Ok(Self { tokens, index, bos, unk, eos })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos_id(&self) -> TokenId {
        self.bos
    }

    pub fn unk_id(&self) -> TokenId {
        self.unk
    }

    pub fn eos_id(&self) -> Option<TokenId> {
        self.eos
    }

    /// Reserved markers never participate in text matching.
    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.bos || id == self.unk || Some(id) == self.eos
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Greedy longest-match tokenization with a BOS marker prepended.
    ///
    /// At each position the longest matching non-special token is consumed;
    /// a maximal span that matches nothing becomes a single UNK.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        if text.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let mut ids = vec![self.bos];
        ids.extend(self.match_spans(text));
        Ok(ids)
    }

    /// Tokenize answer text that continues an existing sequence (no BOS).
    pub fn tokenize_continuation(&self, text: &str) -> Result<Vec<TokenId>, ModelError> {
        if text.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        Ok(self.match_spans(text))
    }

    fn match_spans(&self, text: &str) -> Vec<TokenId> {
        let mut ids = Vec::new();
        let mut pos = 0;
        let mut in_unknown = false;
        while pos < text.len() {
            match self.longest_match(&text[pos..]) {
                Some((id, len)) => {
                    ids.push(id);
                    pos += len;
                    in_unknown = false;
                }
                None => {
                    if !in_unknown {
                        ids.push(self.unk);
                        in_unknown = true;
                    }
                    pos += text[pos..].chars().next().map_or(1, char::len_utf8);
                }
            }
        }
        ids
    }

    fn longest_match(&self, rest: &str) -> Option<(TokenId, usize)> {
        let mut best: Option<(TokenId, usize)> = None;
        for (id, tok) in self.tokens.iter().enumerate() {
            if self.is_special(id) || !rest.starts_with(tok.as_str()) {
                continue;
            }
            if best.map_or(true, |(_, len)| tok.len() > len) {
                best = Some((id, tok.len()));
            }
        }
        best
    }

    /// Concatenate the token strings for a sequence of ids. Unknown ids are
    /// skipped; markers render literally.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .concat()
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = ModelError;

    fn try_from(tokens: Vec<String>) -> Result<Self, Self::Error> {
        Vocab::new(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(vocab: Vocab) -> Vec<String> {
        vocab.tokens
    }
}
