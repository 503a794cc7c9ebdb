//! Greedy, beam and nucleus decoding over any [`ConditionalModel`].
//!
//! Shared rules:
//! * BOS is never emitted.
//! * `max_length` counts EOS; at the last permitted position EOS is forced, so
//!   every returned hypothesis is finished.
//! * Ties go to the lowest token id; candidate lists tie-break by the order in
//!   which they were produced.

use std::cmp::Ordering;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Document, Hypothesis, TokenId};
use crate::error::{Error, Result};
use crate::models::ConditionalModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Token cap, EOS included.
    pub max_length: usize,
    /// Finished beams are ordered by `logprob / len^length_penalty`.
    pub length_penalty: f64,
    /// Seed for sampling decoders.
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_length: 32,
            length_penalty: 0.0,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_length == 0 {
            return Err(Error::config("max_length must be at least 1"));
        }
        if !self.length_penalty.is_finite() {
            return Err(Error::config("length_penalty must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub width: usize,
}

impl BeamConfig {
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::config("beam width must be at least 1"));
        }
        Ok(BeamConfig { width })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NucleusConfig {
    pub top_p: f64,
}

impl NucleusConfig {
    pub fn new(top_p: f64) -> Result<Self> {
        if !(top_p > 0.0 && top_p <= 1.0) {
            return Err(Error::config(format!("top_p must lie in (0, 1], got {top_p}")));
        }
        Ok(NucleusConfig { top_p })
    }
}

/// Tokens that may follow a hypothesis of length `len`.
pub(crate) fn allowed_tokens<M: ConditionalModel + ?Sized>(
    model: &M,
    len: usize,
    cfg: &DecodeConfig,
) -> Vec<TokenId> {
    let eos = model.eos_id();
    if len + 1 >= cfg.max_length {
        return vec![eos];
    }
    let bos = model.bos_id();
    (0..model.vocab_size() as TokenId).filter(|&t| t != bos).collect()
}

/// Allowed tokens ordered by log-probability descending, id ascending on ties.
pub(crate) fn ranked_tokens(lps: &[f64], allowed: &[TokenId]) -> Vec<TokenId> {
    let mut toks = allowed.to_vec();
    toks.sort_by(|&a, &b| {
        lps[b as usize]
            .total_cmp(&lps[a as usize])
            .then(a.cmp(&b))
    });
    toks
}

fn argmax(lps: &[f64], allowed: &[TokenId]) -> TokenId {
    let mut best = allowed[0];
    for &t in &allowed[1..] {
        if lps[t as usize] > lps[best as usize] {
            best = t;
        }
    }
    best
}

pub fn greedy_decode<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    greedy_from(model, x, Hypothesis::empty(), cfg)
}

/// Greedy continuation of `start` until EOS.
pub fn greedy_from<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    start: Hypothesis,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    cfg.validate()?;
    let mut h = start;
    while !h.finished {
        let lps = model.next_token_logprobs(&h.tokens, x)?;
        let allowed = allowed_tokens(model, h.len(), cfg);
        let t = argmax(&lps, &allowed);
        h = h.extend(t, lps[t as usize], model.eos_id())?;
    }
    Ok(h)
}

/// Upper bound on the adjusted score any continuation of `h` can reach.
fn optimistic_score(h: &Hypothesis, cfg: &DecodeConfig) -> f64 {
    if cfg.length_penalty == 0.0 {
        return h.logprob;
    }
    let shortest = (h.len() + 1) as f64;
    let longest = cfg.max_length.max(h.len() + 1) as f64;
    // logprob <= 0, so the bound favours whichever length shrinks |logprob| most
    let len = if cfg.length_penalty > 0.0 { longest } else { shortest };
    h.logprob / len.powf(cfg.length_penalty)
}

/// Finished-hypothesis pool kept in adjusted-score order, insertion order on
/// ties.
pub(crate) struct FinishedPool {
    entries: Vec<(f64, usize, Hypothesis)>,
    next_seq: usize,
    capacity: usize,
    length_penalty: f64,
}

impl FinishedPool {
    pub(crate) fn new(capacity: usize, length_penalty: f64) -> Self {
        FinishedPool {
            entries: Vec::new(),
            next_seq: 0,
            capacity,
            length_penalty,
        }
    }

    pub(crate) fn push(&mut self, h: Hypothesis) {
        let score = h.adjusted_score(self.length_penalty);
        self.entries.push((score, self.next_seq, h));
        self.next_seq += 1;
        self.entries
            .sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        self.entries.truncate(self.capacity);
    }

    /// True once the pool is full and no live hypothesis can displace its
    /// worst member.
    pub(crate) fn is_closed(&self, live: &[Hypothesis], cfg: &DecodeConfig) -> bool {
        if self.entries.len() < self.capacity {
            return false;
        }
        let worst = self.entries.last().map(|e| e.0).unwrap_or(f64::NEG_INFINITY);
        live.iter().all(|h| optimistic_score(h, cfg) <= worst)
    }

    pub(crate) fn into_sorted(self) -> Vec<Hypothesis> {
        self.entries.into_iter().map(|e| e.2).collect()
    }
}

pub fn beam_decode<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    beam: &BeamConfig,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    beam_from(model, x, Hypothesis::empty(), beam, cfg)
}

struct Extension {
    score: f64,
    parent: usize,
    token: TokenId,
    token_logprob: f64,
}

fn extension_order(a: &Extension, b: &Extension) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.parent.cmp(&b.parent))
        .then(a.token.cmp(&b.token))
}

/// Beam search continuing from `start`. Returns at most `width` finished
/// hypotheses sorted by adjusted score, best first.
pub fn beam_from<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    start: Hypothesis,
    beam: &BeamConfig,
    cfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let k = beam.width.max(1);
    if start.finished {
        return Ok(vec![start]);
    }
    let eos = model.eos_id();
    let mut pool = FinishedPool::new(k, cfg.length_penalty);
    let mut live = vec![start];
    while !live.is_empty() {
        let mut exts = Vec::with_capacity(live.len() * model.vocab_size());
        for (parent, h) in live.iter().enumerate() {
            let lps = model.next_token_logprobs(&h.tokens, x)?;
            for t in allowed_tokens(model, h.len(), cfg) {
                let lp = lps[t as usize];
                exts.push(Extension {
                    score: h.logprob + lp,
                    parent,
                    token: t,
                    token_logprob: lp,
                });
            }
        }
        exts.sort_by(extension_order);
        exts.truncate(k);
        let mut next = Vec::with_capacity(k);
        for e in exts {
            let h = live[e.parent].extend(e.token, e.token_logprob, eos)?;
            if h.finished {
                pool.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        if pool.is_closed(&live, cfg) {
            break;
        }
    }
    Ok(pool.into_sorted())
}

/// The nucleus at one step: emittable tokens by probability descending (id
/// ascending on ties), truncated to the shortest prefix with mass >= `top_p`.
/// Probabilities are renormalized over emittable tokens first.
pub fn nucleus_set(lps: &[f64], allowed: &[TokenId], top_p: f64) -> Vec<(TokenId, f64)> {
    let ranked = ranked_tokens(lps, allowed);
    let total: f64 = ranked.iter().map(|&t| lps[t as usize].exp()).sum();
    let mut out = Vec::new();
    let mut mass = 0.0;
    for t in ranked {
        let p = lps[t as usize].exp() / total;
        out.push((t, p));
        mass += p;
        if mass >= top_p {
            break;
        }
    }
    out
}

pub fn nucleus_decode<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    nuc: &NucleusConfig,
    cfg: &DecodeConfig,
) -> Result<Hypothesis> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    nucleus_from(model, x, Hypothesis::empty(), nuc, cfg, &mut rng)
}

/// Nucleus sampling continuation of `start` driven by `rng` (ChaCha8).
pub fn nucleus_from<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    start: Hypothesis,
    nuc: &NucleusConfig,
    cfg: &DecodeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Hypothesis> {
    cfg.validate()?;
    let mut h = start;
    while !h.finished {
        let lps = model.next_token_logprobs(&h.tokens, x)?;
        let allowed = allowed_tokens(model, h.len(), cfg);
        let t = sample_from(&nucleus_set(&lps, &allowed, nuc.top_p), rng);
        h = h.extend(t, lps[t as usize], model.eos_id())?;
    }
    Ok(h)
}

fn sample_from(nucleus: &[(TokenId, f64)], rng: &mut ChaCha8Rng) -> TokenId {
    if nucleus.len() == 1 {
        return nucleus[0].0;
    }
    let mass: f64 = nucleus.iter().map(|e| e.1).sum();
    let mut u = rng.gen::<f64>() * mass;
    for &(t, p) in nucleus {
        if u < p {
            return t;
        }
        u -= p;
    }
    nucleus[nucleus.len() - 1].0
}
