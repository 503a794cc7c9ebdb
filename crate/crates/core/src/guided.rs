//! Faithfulness-guided decoding.
//!
//! * [`rank_candidates`] re-orders a decoder's candidate list by a scorer.
//! * [`lookahead_decode`] scores every candidate next token by rolling out a
//!   continuation from it and selects by
//!   `log P(y_1..t | x) + w * max_rollouts h(rollout, x)`.
//!   Only the top-`c` tokens per live hypothesis are eligible. The heuristic
//!   term is recomputed each step and never stored in the hypothesis score.
//! * [`max_top_analysis`] and [`prefix_rollout_profile`] are the diagnostics
//!   used to study the beam search space.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::decoders::{
    allowed_tokens, beam_decode, beam_from, greedy_decode, greedy_from, nucleus_from, nucleus_set,
    ranked_tokens, BeamConfig, DecodeConfig, FinishedPool, NucleusConfig,
};
use crate::domain::{Document, Hypothesis, ScoredCandidate, TokenId};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::ConditionalModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RolloutStrategy {
    Greedy,
    /// One ancestral sample, seeded from the decode seed and the prefix.
    Sampling,
    Beam { width: usize },
}

/// How far a rollout continues past the scored extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RolloutLength {
    /// Until EOS.
    Full,
    /// At most this many further tokens; the result is scored as-is.
    Tokens(usize),
}

impl Serialize for RolloutLength {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RolloutLength::Full => s.serialize_str("full"),
            RolloutLength::Tokens(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for RolloutLength {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Count(usize),
        }
        match Raw::deserialize(d)? {
            Raw::Word(w) if w == "full" => Ok(RolloutLength::Full),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "rollout length must be \"full\" or an integer, got {w:?}"
            ))),
            Raw::Count(n) => Ok(RolloutLength::Tokens(n)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Base {
    Greedy,
    Beam { width: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LookaheadConfig {
    pub weight: f64,
    pub candidate_cap: usize,
    pub rollout: RolloutStrategy,
    pub length: RolloutLength,
    pub base: Base,
    /// Name of the heuristic scorer, recorded in reports.
    pub scorer: String,
}

impl Default for LookaheadConfig {
    fn default() -> Self {
        LookaheadConfig {
            weight: 5.0,
            candidate_cap: 5,
            rollout: RolloutStrategy::Greedy,
            length: RolloutLength::Full,
            base: Base::Greedy,
            scorer: "source_precision".into(),
        }
    }
}

impl LookaheadConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::config("lookahead weight must be finite and >= 0"));
        }
        if self.candidate_cap == 0 || self.candidate_cap > vocab_size {
            return Err(Error::config(format!(
                "candidate_cap must lie in 1..={vocab_size}, got {}",
                self.candidate_cap
            )));
        }
        if let RolloutStrategy::Beam { width: 0 } = self.rollout {
            return Err(Error::config("rollout beam width must be positive"));
        }
        if let Base::Beam { width: 0 } = self.base {
            return Err(Error::config("base beam width must be positive"));
        }
        Ok(())
    }
}

/// Completions generated from one extension, with their heuristic scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSet {
    pub completions: Vec<Vec<TokenId>>,
    pub scores: Vec<f64>,
}

impl RolloutSet {
    pub fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn best(&self) -> &[TokenId] {
        let mut best = 0;
        for (i, s) in self.scores.iter().enumerate() {
            if *s > self.scores[best] {
                best = i;
            }
        }
        &self.completions[best]
    }
}

fn mix_seed(seed: u64, tokens: &[TokenId]) -> u64 {
    let mut h = seed ^ 0xA076_1D64_78BD_642F;
    for &t in tokens {
        h = (h ^ t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(31);
    }
    h
}

fn strip_eos(tokens: &[TokenId], eos: TokenId) -> &[TokenId] {
    match tokens.split_last() {
        Some((&last, rest)) if last == eos => rest,
        _ => tokens,
    }
}

/// Runs `steps` rounds of beam expansion from `start` without forcing an end,
/// returning the `width` best sequences (finished or not).
fn beam_steps<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    start: &Hypothesis,
    width: usize,
    steps: usize,
    dcfg: &DecodeConfig,
) -> Result<Vec<Hypothesis>> {
    let eos = model.eos_id();
    let mut beam = vec![start.clone()];
    for _ in 0..steps {
        if beam.iter().all(|h| h.finished) {
            break;
        }
        let mut next: Vec<(Hypothesis, usize)> = Vec::new();
        for (i, h) in beam.iter().enumerate() {
            if h.finished {
                next.push((h.clone(), i));
                continue;
            }
            let lps = model.next_token_logprobs(&h.tokens, x)?;
            for t in allowed_tokens(model, h.len(), dcfg) {
                next.push((h.extend(t, lps[t as usize], eos)?, i));
            }
        }
        next.sort_by(|a, b| {
            b.0.logprob
                .total_cmp(&a.0.logprob)
                .then(a.1.cmp(&b.1))
                .then(a.0.tokens.last().cmp(&b.0.tokens.last()))
        });
        next.truncate(width);
        beam = next.into_iter().map(|e| e.0).collect();
    }
    Ok(beam)
}

/// Generates the rollout set for one extension and scores it.
pub fn rollout<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    ext: &Hypothesis,
    cfg: &LookaheadConfig,
    scorer: &dyn Scorer,
    dcfg: &DecodeConfig,
) -> Result<RolloutSet> {
    let eos = model.eos_id();
    let completions: Vec<Vec<TokenId>> = if ext.finished {
        vec![ext.tokens.clone()]
    } else {
        match cfg.length {
            RolloutLength::Tokens(0) => vec![ext.tokens.clone()],
            RolloutLength::Full => match cfg.rollout {
                RolloutStrategy::Greedy => {
                    vec![greedy_from(model, x, ext.clone(), dcfg)?.tokens]
                }
                RolloutStrategy::Sampling => {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(dcfg.seed, &ext.tokens));
                    let nuc = NucleusConfig { top_p: 1.0 };
                    vec![nucleus_from(model, x, ext.clone(), &nuc, dcfg, &mut rng)?.tokens]
                }
                RolloutStrategy::Beam { width } => {
                    beam_from(model, x, ext.clone(), &BeamConfig { width }, dcfg)?
                        .into_iter()
                        .map(|h| h.tokens)
                        .collect()
                }
            },
            RolloutLength::Tokens(l) => match cfg.rollout {
                RolloutStrategy::Greedy => {
                    vec![partial_single(model, x, ext, l, dcfg, None)?.tokens]
                }
                RolloutStrategy::Sampling => {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(dcfg.seed, &ext.tokens));
                    vec![partial_single(model, x, ext, l, dcfg, Some(&mut rng))?.tokens]
                }
                RolloutStrategy::Beam { width } => beam_steps(model, x, ext, width, l, dcfg)?
                    .into_iter()
                    .map(|h| h.tokens)
                    .collect(),
            },
        }
    };
    let scores = completions
        .iter()
        .map(|c| scorer.score(strip_eos(c, eos), &x.tokens))
        .collect();
    Ok(RolloutSet {
        completions,
        scores,
    })
}

/// Greedy (or sampled, when `rng` is given) continuation of at most `steps`
/// tokens.
fn partial_single<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    start: &Hypothesis,
    steps: usize,
    dcfg: &DecodeConfig,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Hypothesis> {
    let mut h = start.clone();
    for _ in 0..steps {
        if h.finished {
            break;
        }
        let lps = model.next_token_logprobs(&h.tokens, x)?;
        let allowed = allowed_tokens(model, h.len(), dcfg);
        let t = match rng.as_deref_mut() {
            None => ranked_tokens(&lps, &allowed)[0],
            Some(r) => {
                let nucleus = nucleus_set(&lps, &allowed, 1.0);
                sample_token(&nucleus, r)
            }
        };
        h = h.extend(t, lps[t as usize], model.eos_id())?;
    }
    Ok(h)
}

fn sample_token(nucleus: &[(TokenId, f64)], rng: &mut ChaCha8Rng) -> TokenId {
    use rand::Rng;
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

/// One pooled extension considered during a lookahead step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Index of the live hypothesis this extends.
    pub parent: usize,
    pub token: TokenId,
    /// Cumulative model log-probability of the extension.
    pub logprob: f64,
    /// Max heuristic score over the extension's rollouts.
    pub heuristic: f64,
    /// `logprob + weight * heuristic`.
    pub selection: f64,
    pub rollout: Vec<TokenId>,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub entries: Vec<TraceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookaheadOutput {
    /// One hypothesis for a greedy base; up to `width` for a beam base, best
    /// model score first.
    pub candidates: Vec<Hypothesis>,
    pub trace: Vec<TraceStep>,
}

impl LookaheadOutput {
    pub fn best(&self) -> &Hypothesis {
        &self.candidates[0]
    }

    /// Writes the trace as JSON Lines, one step per line.
    pub fn write_trace_jsonl<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for step in &self.trace {
            serde_json::to_writer(&mut w, step)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

struct Pooled {
    parent: usize,
    slot: usize,
    ext: Hypothesis,
    heuristic: f64,
    selection: f64,
    rollout: Vec<TokenId>,
}

/// Expands every live hypothesis into its top-`c` extensions and scores each
/// with a fresh rollout. Rollouts run in parallel; results keep pool order.
fn score_pool<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    live: &[Hypothesis],
    cfg: &LookaheadConfig,
    scorer: &dyn Scorer,
    dcfg: &DecodeConfig,
) -> Result<Vec<Pooled>> {
    let eos = model.eos_id();
    let mut exts = Vec::new();
    for (parent, h) in live.iter().enumerate() {
        let lps = model.next_token_logprobs(&h.tokens, x)?;
        let allowed = allowed_tokens(model, h.len(), dcfg);
        for (slot, t) in ranked_tokens(&lps, &allowed)
            .into_iter()
            .take(cfg.candidate_cap)
            .enumerate()
        {
            exts.push((parent, slot, h.extend(t, lps[t as usize], eos)?));
        }
    }
    // memoize identical extensions within the step
    let mut unique: HashMap<&[TokenId], usize> = HashMap::new();
    let mut jobs: Vec<&Hypothesis> = Vec::new();
    let job_of: Vec<usize> = exts
        .iter()
        .map(|(_, _, e)| {
            *unique.entry(e.tokens.as_slice()).or_insert_with(|| {
                jobs.push(e);
                jobs.len() - 1
            })
        })
        .collect();
    let rollouts: Vec<RolloutSet> = jobs
        .par_iter()
        .map(|e| rollout(model, x, e, cfg, scorer, dcfg))
        .collect::<Result<_>>()?;
    Ok(exts
        .into_iter()
        .zip(job_of)
        .map(|((parent, slot, ext), j)| {
            let rs = &rollouts[j];
            let heuristic = rs.max_score();
            Pooled {
                parent,
                slot,
                selection: ext.logprob + cfg.weight * heuristic,
                heuristic,
                rollout: rs.best().to_vec(),
                ext,
            }
        })
        .collect())
}

fn trace_step(step: usize, pool: &[Pooled], chosen: &[bool]) -> TraceStep {
    TraceStep {
        step,
        entries: pool
            .iter()
            .zip(chosen)
            .map(|(p, &c)| TraceEntry {
                parent: p.parent,
                token: *p.ext.tokens.last().expect("extension has a token"),
                logprob: p.ext.logprob,
                heuristic: p.heuristic,
                selection: p.selection,
                rollout: p.rollout.clone(),
                chosen: c,
            })
            .collect(),
    }
}

pub fn lookahead_decode<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    cfg: &LookaheadConfig,
    scorer: &dyn Scorer,
    dcfg: &DecodeConfig,
) -> Result<LookaheadOutput> {
    cfg.validate(model.vocab_size())?;
    dcfg.validate()?;
    match cfg.base {
        Base::Greedy => lookahead_greedy(model, x, cfg, scorer, dcfg),
        Base::Beam { width } => lookahead_beam(model, x, width, cfg, scorer, dcfg),
    }
}

fn lookahead_greedy<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    cfg: &LookaheadConfig,
    scorer: &dyn Scorer,
    dcfg: &DecodeConfig,
) -> Result<LookaheadOutput> {
    let mut h = Hypothesis::empty();
    let mut trace = Vec::new();
    while !h.finished {
        let live = [h];
        let pool = score_pool(model, x, &live, cfg, scorer, dcfg)?;
        let mut best = 0;
        for (i, p) in pool.iter().enumerate() {
            if p.selection > pool[best].selection {
                best = i;
            }
        }
        let chosen: Vec<bool> = (0..pool.len()).map(|i| i == best).collect();
        trace.push(trace_step(trace.len(), &pool, &chosen));
        h = pool.into_iter().nth(best).expect("pool is non-empty").ext;
    }
    Ok(LookaheadOutput {
        candidates: vec![h],
        trace,
    })
}

fn lookahead_beam<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    width: usize,
    cfg: &LookaheadConfig,
    scorer: &dyn Scorer,
    dcfg: &DecodeConfig,
) -> Result<LookaheadOutput> {
    let mut finished = FinishedPool::new(width, dcfg.length_penalty);
    let mut live = vec![Hypothesis::empty()];
    let mut trace = Vec::new();
    while !live.is_empty() {
        let pool = score_pool(model, x, &live, cfg, scorer, dcfg)?;
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| {
            pool[b]
                .selection
                .total_cmp(&pool[a].selection)
                .then(pool[a].parent.cmp(&pool[b].parent))
                .then(pool[a].slot.cmp(&pool[b].slot))
        });
        order.truncate(width);
        let mut chosen = vec![false; pool.len()];
        for &i in &order {
            chosen[i] = true;
        }
        trace.push(trace_step(trace.len(), &pool, &chosen));
        let mut next = Vec::with_capacity(width);
        for i in order {
            let h = pool[i].ext.clone();
            if h.finished {
                finished.push(h);
            } else {
                next.push(h);
            }
        }
        live = next;
        if finished.is_closed(&live, dcfg) {
            break;
        }
    }
    Ok(LookaheadOutput {
        candidates: finished.into_sorted(),
        trace,
    })
}

/// Scores every candidate with `scorer` (plus any `extras`) and sorts by the
/// ranking score, descending, with original position breaking ties.
pub fn rank_candidates(
    cands: &[Hypothesis],
    scorer: &dyn Scorer,
    x: &Document,
) -> Result<Vec<ScoredCandidate>> {
    rank_candidates_with(cands, scorer, &[], x)
}

pub fn rank_candidates_with(
    cands: &[Hypothesis],
    scorer: &dyn Scorer,
    extras: &[&dyn Scorer],
    x: &Document,
) -> Result<Vec<ScoredCandidate>> {
    if cands.is_empty() {
        return Err(Error::usage("cannot rank an empty candidate list"));
    }
    let mut out: Vec<ScoredCandidate> = cands
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let rank_score = scorer.score(h.content(), &x.tokens);
            let mut metric_scores: std::collections::BTreeMap<String, f64> = extras
                .iter()
                .map(|s| (s.name().to_string(), s.score(h.content(), &x.tokens)))
                .collect();
            metric_scores.insert(scorer.name().to_string(), rank_score);
            ScoredCandidate {
                hypothesis: h.clone(),
                metric_scores,
                rank_score,
                source_rank: i,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.rank_score
            .total_cmp(&a.rank_score)
            .then(a.source_rank.cmp(&b.source_rank))
    });
    Ok(out)
}

/// Beam lookahead followed by re-ranking of its candidates.
pub fn beam_lookahead_rank<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    cfg: &LookaheadConfig,
    lookahead_scorer: &dyn Scorer,
    rank_scorer: &dyn Scorer,
    dcfg: &DecodeConfig,
) -> Result<Vec<ScoredCandidate>> {
    if !matches!(cfg.base, Base::Beam { .. }) {
        return Err(Error::usage("beam_lookahead_rank needs a beam base"));
    }
    let out = lookahead_decode(model, x, cfg, lookahead_scorer, dcfg)?;
    rank_candidates(&out.candidates, rank_scorer, x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxTopRow {
    pub beam_size: usize,
    pub scorer: String,
    /// Mean score of the beam's top candidate.
    pub mean_top: f64,
    /// Mean of the best score among all beam candidates.
    pub mean_max: f64,
}

/// For each beam size, decodes every document and compares the scorer value
/// of the beam-top candidate with the best value over the whole beam.
pub fn max_top_analysis<M: ConditionalModel + ?Sized>(
    model: &M,
    corpus: &[Document],
    beam_sizes: &[usize],
    scorers: &[&dyn Scorer],
    dcfg: &DecodeConfig,
) -> Result<Vec<MaxTopRow>> {
    if beam_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::usage("beam sizes must be strictly ascending"));
    }
    if corpus.is_empty() {
        return Err(Error::usage("max/top analysis needs documents"));
    }
    let mut rows = Vec::new();
    for &k in beam_sizes {
        let beam = BeamConfig::new(k)?;
        let per_doc: Vec<Vec<(f64, f64)>> = corpus
            .par_iter()
            .map(|doc| {
                let cands = beam_decode(model, doc, &beam, dcfg)?;
                Ok(scorers
                    .iter()
                    .map(|s| {
                        let vals: Vec<f64> =
                            cands.iter().map(|c| s.score(c.content(), &doc.tokens)).collect();
                        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        (vals[0], max)
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for (j, s) in scorers.iter().enumerate() {
            let n = per_doc.len() as f64;
            let top: f64 = per_doc.iter().map(|d| d[j].0).sum::<f64>() / n;
            let max: f64 = per_doc.iter().map(|d| d[j].1).sum::<f64>() / n;
            rows.push(MaxTopRow {
                beam_size: k,
                scorer: s.name().to_string(),
                mean_top: top,
                mean_max: max,
            });
        }
    }
    Ok(rows)
}

/// Greedily completes each prefix of a decode and scores the completion.
/// Returns one row per prefix, one column per scorer.
pub fn prefix_rollout_profile<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    prefixes: &[Vec<TokenId>],
    scorers: &[&dyn Scorer],
    dcfg: &DecodeConfig,
) -> Result<Vec<Vec<f64>>> {
    let eos = model.eos_id();
    for w in prefixes.windows(2) {
        if !w[1].starts_with(&w[0]) {
            return Err(Error::usage("trace prefixes must be nested"));
        }
    }
    prefixes
        .iter()
        .map(|p| {
            let start = Hypothesis {
                tokens: p.clone(),
                logprob: 0.0,
                finished: p.last() == Some(&eos),
            };
            let done = if start.finished {
                start
            } else if start.is_empty() {
                greedy_decode(model, x, dcfg)?
            } else {
                greedy_from(model, x, start, dcfg)?
            };
            Ok(scorers
                .iter()
                .map(|s| s.score(done.content(), &x.tokens))
                .collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Vocabulary;
    use crate::metrics::{SourcePrecision, Novelty};
    use crate::models::SyntheticModel;

    #[test]
    fn rollout_length_serde() {
        assert_eq!(serde_json::to_string(&RolloutLength::Full).unwrap(), "\"full\"");
        assert_eq!(serde_json::to_string(&RolloutLength::Tokens(3)).unwrap(), "3");
        let l: RolloutLength = serde_json::from_str("\"full\"").unwrap();
        assert_eq!(l, RolloutLength::Full);
        let l: RolloutLength = serde_json::from_str("0").unwrap();
        assert_eq!(l, RolloutLength::Tokens(0));
        assert!(serde_json::from_str::<RolloutLength>("\"half\"").is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = LookaheadConfig::default();
        assert!(cfg.validate(10).is_ok());
        cfg.candidate_cap = 11;
        assert!(cfg.validate(10).is_err());
        cfg.candidate_cap = 5;
        cfg.weight = -1.0;
        assert!(cfg.validate(10).is_err());
    }

    #[test]
    fn single_candidate_ranking_is_identity() {
        let h = Hypothesis {
            tokens: vec![2, 1],
            logprob: -1.0,
            finished: true,
        };
        let doc = Document::new("d", vec![2]);
        let out = rank_candidates(&[h.clone()], &SourcePrecision, &doc).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].hypothesis, h);
        assert_eq!(out[0].rank_score, 1.0);
        assert!(rank_candidates(&[], &SourcePrecision, &doc).is_err());
    }

    #[test]
    fn ranking_swaps_faithful_candidate_to_top() {
        // [a, q] first in beam order with precision 0.5, [a, b] second with 1.0
        let (a, b, q) = (2, 3, 6);
        let doc = Document::new("d", vec![a, b, 4]);
        let cands = vec![
            Hypothesis {
                tokens: vec![a, q, 1],
                logprob: -1.0,
                finished: true,
            },
            Hypothesis {
                tokens: vec![a, b, 1],
                logprob: -2.0,
                finished: true,
            },
        ];
        let out = rank_candidates_with(&cands, &SourcePrecision, &[&Novelty], &doc).unwrap();
        assert_eq!(out[0].hypothesis.tokens, vec![a, b, 1]);
        assert_eq!(out[0].source_rank, 1);
        assert_eq!(out[1].rank_score, 0.5);
        assert!(out[0].metric_scores.contains_key("novelty"));
        assert_eq!(out[0].metric_scores["source_precision"], out[0].rank_score);
    }

    #[test]
    fn rollouts_begin_with_their_prefix() {
        let v = Vocabulary::synthetic(7).unwrap();
        let m = SyntheticModel::new(&v, 3, 2.0);
        let doc = Document::new("d", vec![2, 3, 4]);
        let dcfg = DecodeConfig {
            max_length: 6,
            ..DecodeConfig::default()
        };
        let ext = Hypothesis::empty().extend(5, -1.0, 1).unwrap();
        for rollout_kind in [
            RolloutStrategy::Greedy,
            RolloutStrategy::Sampling,
            RolloutStrategy::Beam { width: 3 },
        ] {
            for length in [RolloutLength::Full, RolloutLength::Tokens(0), RolloutLength::Tokens(2)] {
                let cfg = LookaheadConfig {
                    rollout: rollout_kind,
                    length,
                    ..LookaheadConfig::default()
                };
                let rs = rollout(&m, &doc, &ext, &cfg, &SourcePrecision, &dcfg).unwrap();
                assert!(!rs.completions.is_empty());
                assert_eq!(rs.completions.len(), rs.scores.len());
                for c in &rs.completions {
                    assert!(c.starts_with(&ext.tokens));
                    assert!(c.len() <= dcfg.max_length);
                    if let RolloutLength::Tokens(l) = length {
                        assert!(c.len() <= ext.len() + l);
                    }
                }
                if matches!(rollout_kind, RolloutStrategy::Greedy | RolloutStrategy::Sampling) {
                    assert_eq!(rs.completions.len(), 1);
                }
            }
        }
    }

    #[test]
    fn max_top_rejects_unsorted_sizes() {
        let v = Vocabulary::synthetic(5).unwrap();
        let m = SyntheticModel::new(&v, 3, 2.0);
        let docs = vec![Document::new("d", vec![2])];
        let scorers: Vec<&dyn Scorer> = vec![&SourcePrecision];
        let dcfg = DecodeConfig::default();
        assert!(max_top_analysis(&m, &docs, &[4, 2], &scorers, &dcfg).is_err());
    }

    #[test]
    fn profile_rejects_non_nested_prefixes() {
        let v = Vocabulary::synthetic(5).unwrap();
        let m = SyntheticModel::new(&v, 3, 2.0);
        let doc = Document::new("d", vec![2]);
        let scorers: Vec<&dyn Scorer> = vec![&SourcePrecision];
        let bad = vec![vec![2], vec![3, 2]];
        assert!(prefix_rollout_profile(&m, &doc, &bad, &scorers, &DecodeConfig::default()).is_err());
    }
}
