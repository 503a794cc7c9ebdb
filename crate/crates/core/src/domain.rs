//! Shared domain types: vocabulary, source documents, hypotheses and scored
//! candidates.
//!
//! All values are immutable once built. Log-probabilities are natural logs.
//! BOS is a virtual prefix position: it has an id in the vocabulary but is
//! never stored in [`Hypothesis::tokens`].

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    bos_id: TokenId,
    eos_id: TokenId,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    bos_id: TokenId,
    eos_id: TokenId,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        Vocabulary::new(repr.tokens, repr.bos_id, repr.eos_id)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr {
            tokens: v.tokens,
            bos_id: v.bos_id,
            eos_id: v.eos_id,
        }
    }
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>, bos_id: TokenId, eos_id: TokenId) -> Result<Self> {
        if tokens.len() < 3 {
            return Err(Error::config(format!(
                "vocabulary needs at least 3 tokens, got {}",
                tokens.len()
            )));
        }
        if bos_id == eos_id {
            return Err(Error::config("bos_id and eos_id must differ"));
        }
        for id in [bos_id, eos_id] {
            if id as usize >= tokens.len() {
                return Err(Error::InvalidToken {
                    id,
                    size: tokens.len(),
                });
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::config(format!(
                    "token {tok:?} is empty or contains whitespace"
                )));
            }
            if index.insert(tok.clone(), i as TokenId).is_some() {
                return Err(Error::config(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            bos_id,
            eos_id,
        })
    }

    /// `<s>`, `</s>` followed by `w2 .. w{size-1}`.
    pub fn synthetic(size: usize) -> Result<Self> {
        let mut tokens = vec!["<s>".to_string(), "</s>".to_string()];
        tokens.extend((2..size).map(|i| format!("w{i}")));
        Vocabulary::new(tokens, 0, 1)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn bos_id(&self) -> TokenId {
        self.bos_id
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::InvalidToken {
                id,
                size: self.tokens.len(),
            })
    }

    pub fn check(&self, id: TokenId) -> Result<()> {
        self.token(id).map(|_| ())
    }

    /// Ids of tokens that may appear inside a sequence body (everything except
    /// BOS and EOS).
    pub fn content_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len() as TokenId).filter(move |&t| t != self.bos_id && t != self.eos_id)
    }

    /// Whitespace tokenization.
    pub fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| Error::UnknownToken(w.to_string())))
            .collect()
    }

    /// Space-joined token strings with EOS omitted.
    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let mut words = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let w = self.token(t)?;
            if t != self.eos_id {
                words.push(w);
            }
        }
        Ok(words.join(" "))
    }
}

/// A source document x.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<TokenId>,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: Vec<TokenId>) -> Self {
        Document {
            id: id.into(),
            tokens,
        }
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::usage(format!("document {:?} is empty", self.id)));
        }
        self.tokens.iter().try_for_each(|&t| vocab.check(t))
    }

    /// Membership mask over the vocabulary.
    pub fn support_mask(&self, vocab_size: usize) -> Vec<bool> {
        let mut mask = vec![false; vocab_size];
        for &t in &self.tokens {
            if let Some(m) = mask.get_mut(t as usize) {
                *m = true;
            }
        }
        mask
    }
}

/// A partial or finished output sequence with its cumulative log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub finished: bool,
}

impl Default for Hypothesis {
    fn default() -> Self {
        Hypothesis::empty()
    }
}

impl Hypothesis {
    pub fn empty() -> Self {
        Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
            finished: false,
        }
    }

    pub fn extend(&self, token: TokenId, token_logprob: f64, eos_id: TokenId) -> Result<Hypothesis> {
        if self.finished {
            return Err(Error::usage("cannot extend a finished hypothesis"));
        }
        if token_logprob > 0.0 || token_logprob.is_nan() {
            return Err(Error::usage(format!(
                "token log-probability must be <= 0, got {token_logprob}"
            )));
        }
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        tokens.extend_from_slice(&self.tokens);
        tokens.push(token);
        Ok(Hypothesis {
            tokens,
            logprob: self.logprob + token_logprob,
            finished: token == eos_id,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens with the terminating EOS stripped.
    pub fn content(&self) -> &[TokenId] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    /// Every prefix from the empty one up to the full sequence.
    pub fn prefixes(&self) -> Vec<Vec<TokenId>> {
        (0..=self.tokens.len()).map(|t| self.tokens[..t].to_vec()).collect()
    }

    /// Score used to order finished hypotheses: `logprob / len^penalty`.
    pub fn adjusted_score(&self, length_penalty: f64) -> f64 {
        if length_penalty == 0.0 {
            return self.logprob;
        }
        let len = self.tokens.len().max(1) as f64;
        self.logprob / len.powf(length_penalty)
    }
}

/// A hypothesis together with the metric values computed for it during
/// re-ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub hypothesis: Hypothesis,
    pub metric_scores: BTreeMap<String, f64>,
    pub rank_score: f64,
    /// Position in the decoder's original output order.
    pub source_rank: usize,
}
