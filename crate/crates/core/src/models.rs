//! Conditional next-token models.
//!
//! [`ConditionalModel`] is the contract every decoder consumes: a normalized
//! natural-log distribution over the vocabulary given a prefix and a source.
//! Two instances live here: [`SyntheticModel`], a fixed hash-seeded generator
//! whose logits depend on the whole prefix, and [`LogLinearModel`], a
//! first-order model with a source copy gate that can be trained with exact
//! gradients.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Document, Hypothesis, TokenId, Vocabulary};
use crate::error::{Error, Result};

pub trait ConditionalModel: Sync {
    fn vocab_size(&self) -> usize;
    fn bos_id(&self) -> TokenId;
    fn eos_id(&self) -> TokenId;

    /// Normalized log-distribution over the next token.
    fn next_token_logprobs(&self, prefix: &[TokenId], source: &Document) -> Result<Vec<f64>>;
}

impl<M: ConditionalModel + ?Sized> ConditionalModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn bos_id(&self) -> TokenId {
        (**self).bos_id()
    }
    fn eos_id(&self) -> TokenId {
        (**self).eos_id()
    }
    fn next_token_logprobs(&self, prefix: &[TokenId], source: &Document) -> Result<Vec<f64>> {
        (**self).next_token_logprobs(prefix, source)
    }
}

/// Wraps a model and counts calls to `next_token_logprobs`.
pub struct CallCounter<M> {
    inner: M,
    calls: AtomicU64,
}

impl<M: ConditionalModel> CallCounter<M> {
    pub fn new(inner: M) -> Self {
        CallCounter {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: ConditionalModel> ConditionalModel for CallCounter<M> {
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }
    fn bos_id(&self) -> TokenId {
        self.inner.bos_id()
    }
    fn eos_id(&self) -> TokenId {
        self.inner.eos_id()
    }
    fn next_token_logprobs(&self, prefix: &[TokenId], source: &Document) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.next_token_logprobs(prefix, source)
    }
}

pub(crate) fn check_prefix(prefix: &[TokenId], eos: TokenId, vocab_size: usize) -> Result<()> {
    for &t in prefix {
        if t == eos {
            return Err(Error::usage("prefix must not contain EOS"));
        }
        if t as usize >= vocab_size {
            return Err(Error::InvalidToken {
                id: t,
                size: vocab_size,
            });
        }
    }
    Ok(())
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// In-place log-softmax.
pub fn log_softmax(logits: &mut [f64]) {
    let lse = logsumexp(logits);
    for l in logits.iter_mut() {
        *l -= lse;
    }
}

/// `log P(y|x)` as the sum of per-step log-probabilities of `y`.
///
/// `y` may end in EOS; EOS anywhere else is rejected by the model.
pub fn sequence_logprob<M: ConditionalModel + ?Sized>(
    model: &M,
    y: &[TokenId],
    x: &Document,
) -> Result<f64> {
    let mut total = 0.0;
    for t in 0..y.len() {
        let lps = model.next_token_logprobs(&y[..t], x)?;
        let lp = *lps.get(y[t] as usize).ok_or(Error::InvalidToken {
            id: y[t],
            size: lps.len(),
        })?;
        total += lp;
    }
    Ok(total)
}

/// Fixed generator with pseudo-random logits keyed on the whole prefix.
///
/// `logits[v] = scale * u(seed, prefix, v) + copy_bonus * [v in source]`
/// where `u` is a hash mapped to `[-1, 1)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub vocab_size: usize,
    pub bos_id: TokenId,
    pub eos_id: TokenId,
    pub seed: u64,
    pub scale: f64,
    pub copy_bonus: f64,
}

impl SyntheticModel {
    pub fn new(vocab: &Vocabulary, seed: u64, scale: f64) -> Self {
        SyntheticModel {
            vocab_size: vocab.len(),
            bos_id: vocab.bos_id(),
            eos_id: vocab.eos_id(),
            seed,
            scale,
            copy_bonus: 0.0,
        }
    }

    pub fn with_copy_bonus(mut self, bonus: f64) -> Self {
        self.copy_bonus = bonus;
        self
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ConditionalModel for SyntheticModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }
    fn bos_id(&self) -> TokenId {
        self.bos_id
    }
    fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    fn next_token_logprobs(&self, prefix: &[TokenId], source: &Document) -> Result<Vec<f64>> {
        check_prefix(prefix, self.eos_id, self.vocab_size)?;
        let mut h = splitmix64(self.seed);
        for &t in prefix {
            h = splitmix64(h ^ (t as u64 + 1));
        }
        let support = source.support_mask(self.vocab_size);
        let mut logits: Vec<f64> = (0..self.vocab_size)
            .map(|v| {
                let r = splitmix64(h ^ ((v as u64) << 32 | 0x5bd1));
                let u = (r >> 11) as f64 / (1u64 << 53) as f64;
                let bonus = if support[v] { self.copy_bonus } else { 0.0 };
                self.scale * (2.0 * u - 1.0) + bonus
            })
            .collect();
        log_softmax(&mut logits);
        Ok(logits)
    }
}

/// Parameters (or gradients) of a [`LogLinearModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub bias: Vec<f64>,
    /// Row-major `|V| x |V|`; row = previous token (BOS row for the first step).
    pub transition: Vec<f64>,
    pub copy_gate: Vec<f64>,
}

impl Params {
    pub fn zeros(v: usize) -> Self {
        Params {
            bias: vec![0.0; v],
            transition: vec![0.0; v * v],
            copy_gate: vec![0.0; v],
        }
    }

    pub fn len(&self) -> usize {
        self.bias.len() + self.transition.len() + self.copy_gate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.bias.iter().chain(&self.transition).chain(&self.copy_gate)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.bias
            .iter_mut()
            .chain(self.transition.iter_mut())
            .chain(self.copy_gate.iter_mut())
    }

    pub fn get(&self, i: usize) -> f64 {
        *self.iter().nth(i).expect("parameter index in range")
    }

    pub fn set(&mut self, i: usize, value: f64) {
        *self.iter_mut().nth(i).expect("parameter index in range") = value;
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Params) {
        for (a, b) in self.iter_mut().zip(other.iter()) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in self.iter_mut() {
            *a *= alpha;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 40,
            batch_size: 16,
            seed: 7,
            l2: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::config("l2 must be nonnegative"));
        }
        Ok(())
    }
}

/// First-order log-linear model:
/// `logits[v] = bias[v] + transition[prev][v] + copy_gate[v] * [v in source]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearModel {
    bos_id: TokenId,
    eos_id: TokenId,
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
struct LogLinearRepr {
    vocab_size: usize,
    bias: Vec<f64>,
    transition: Vec<f64>,
    copy_gate: Vec<f64>,
}

/// One training pair: source document and target sequence (EOS-terminated).
pub type Example<'a> = (&'a Document, &'a [TokenId]);

impl LogLinearModel {
    pub fn zeros(vocab: &Vocabulary) -> Self {
        LogLinearModel {
            bos_id: vocab.bos_id(),
            eos_id: vocab.eos_id(),
            params: Params::zeros(vocab.len()),
        }
    }

    /// Small seeded uniform initialization in `[-scale, scale)`.
    pub fn random(vocab: &Vocabulary, seed: u64, scale: f64) -> Self {
        let mut m = LogLinearModel::zeros(vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in m.params.iter_mut() {
            *p = rng.gen_range(-scale..scale);
        }
        m
    }

    pub fn from_params(vocab: &Vocabulary, params: Params) -> Result<Self> {
        let v = vocab.len();
        if params.bias.len() != v || params.copy_gate.len() != v || params.transition.len() != v * v
        {
            return Err(Error::Shape(format!(
                "parameters do not match a vocabulary of size {v}"
            )));
        }
        if !params.all_finite() {
            return Err(Error::Shape("parameters must be finite".into()));
        }
        Ok(LogLinearModel {
            bos_id: vocab.bos_id(),
            eos_id: vocab.eos_id(),
            params,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = LogLinearRepr {
            vocab_size: self.vocab_size(),
            bias: self.params.bias.clone(),
            transition: self.params.transition.clone(),
            copy_gate: self.params.copy_gate.clone(),
        };
        Ok(serde_json::to_string(&repr)?)
    }

    pub fn from_json(json: &str, vocab: &Vocabulary) -> Result<Self> {
        let repr: LogLinearRepr = serde_json::from_str(json)?;
        if repr.vocab_size != vocab.len() {
            return Err(Error::Shape(format!(
                "model vocab_size {} does not match vocabulary size {}",
                repr.vocab_size,
                vocab.len()
            )));
        }
        LogLinearModel::from_params(
            vocab,
            Params {
                bias: repr.bias,
                transition: repr.transition,
                copy_gate: repr.copy_gate,
            },
        )
    }

    fn logits_into(&self, prev: TokenId, support: &[bool], out: &mut [f64]) {
        let v = self.vocab_size();
        let row = &self.params.transition[prev as usize * v..(prev as usize + 1) * v];
        for (i, o) in out.iter_mut().enumerate() {
            let gate = if support[i] { self.params.copy_gate[i] } else { 0.0 };
            *o = self.params.bias[i] + row[i] + gate;
        }
    }

    /// Per-sequence summed negative log-likelihood, accumulating its gradient
    /// into `grads` with weight `weight`.
    fn nll_accumulate(
        &self,
        source: &Document,
        target: &[TokenId],
        weight: f64,
        grads: &mut Params,
        buf: &mut [f64],
    ) -> f64 {
        let v = self.vocab_size();
        let support = source.support_mask(v);
        let mut prev = self.bos_id;
        let mut nll = 0.0;
        for &y in target {
            self.logits_into(prev, &support, buf);
            log_softmax(buf);
            nll -= buf[y as usize];
            let row = prev as usize * v;
            for i in 0..v {
                let d = weight * (buf[i].exp() - if i == y as usize { 1.0 } else { 0.0 });
                grads.bias[i] += d;
                grads.transition[row + i] += d;
                if support[i] {
                    grads.copy_gate[i] += d;
                }
            }
            prev = y;
        }
        nll
    }

    /// Mean per-sequence NLL plus `l2 * ||params||^2`, with exact gradients.
    pub fn xe_loss_and_grad(&self, batch: &[Example<'_>], l2: f64) -> Result<(f64, Params)> {
        if batch.is_empty() {
            return Err(Error::usage("xe_loss_and_grad needs a non-empty batch"));
        }
        let v = self.vocab_size();
        for (src, tgt) in batch {
            if tgt.last() != Some(&self.eos_id) {
                return Err(Error::usage(format!(
                    "target for document {:?} must end in EOS",
                    src.id
                )));
            }
            if tgt[..tgt.len() - 1].contains(&self.eos_id) {
                return Err(Error::usage("EOS may only appear at the end of a target"));
            }
            for &t in tgt.iter() {
                if t as usize >= v {
                    return Err(Error::InvalidToken { id: t, size: v });
                }
            }
        }
        let mut grads = Params::zeros(v);
        let mut buf = vec![0.0; v];
        let w = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (src, tgt) in batch {
            total += self.nll_accumulate(src, tgt, w, &mut grads, &mut buf);
        }
        let mut loss = total * w;
        if l2 > 0.0 {
            loss += l2 * self.params.squared_norm();
            grads.axpy(2.0 * l2, &self.params);
        }
        Ok((loss, grads))
    }
}

impl ConditionalModel for LogLinearModel {
    fn vocab_size(&self) -> usize {
        self.params.bias.len()
    }
    fn bos_id(&self) -> TokenId {
        self.bos_id
    }
    fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    fn next_token_logprobs(&self, prefix: &[TokenId], source: &Document) -> Result<Vec<f64>> {
        let v = self.vocab_size();
        check_prefix(prefix, self.eos_id, v)?;
        let prev = prefix.last().copied().unwrap_or(self.bos_id);
        let support = source.support_mask(v);
        let mut out = vec![0.0; v];
        self.logits_into(prev, &support, &mut out);
        log_softmax(&mut out);
        Ok(out)
    }
}

/// Mini-batch gradient descent over `n_items` examples with a caller-supplied
/// objective. Batches are drawn from a seeded shuffle each epoch. Returns the
/// full-data loss measured after every epoch.
pub fn descend<F>(
    model: &mut LogLinearModel,
    n_items: usize,
    cfg: &TrainConfig,
    mut objective: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&LogLinearModel, &[usize]) -> Result<(f64, Params)>,
{
    cfg.validate()?;
    if n_items == 0 {
        return Err(Error::usage("training corpus is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n_items).collect();
    let all: Vec<usize> = (0..n_items).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = objective(model, chunk)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFinite { epoch });
            }
            model.params.axpy(-cfg.learning_rate, &grads);
        }
        let (loss, _) = objective(model, &all)?;
        if !loss.is_finite() || !model.params.all_finite() {
            return Err(Error::NonFinite { epoch });
        }
        history.push(loss);
    }
    Ok(history)
}

/// Trains on cross-entropy and returns the updated model with the per-epoch
/// corpus loss.
pub fn train_logged(
    model: &LogLinearModel,
    corpus: &[Example<'_>],
    cfg: &TrainConfig,
) -> Result<(LogLinearModel, Vec<f64>)> {
    let mut m = model.clone();
    let history = descend(&mut m, corpus.len(), cfg, |m, idx| {
        let batch: Vec<Example<'_>> = idx.iter().map(|&i| corpus[i]).collect();
        m.xe_loss_and_grad(&batch, cfg.l2)
    })?;
    Ok((m, history))
}

pub fn train(
    model: &LogLinearModel,
    corpus: &[Example<'_>],
    cfg: &TrainConfig,
) -> Result<LogLinearModel> {
    train_logged(model, corpus, cfg).map(|(m, _)| m)
}

/// Accumulated logprob of forcing `y` through the model step by step.
pub fn forced_decode<M: ConditionalModel + ?Sized>(
    model: &M,
    y: &[TokenId],
    x: &Document,
) -> Result<Hypothesis> {
    let mut h = Hypothesis::empty();
    for &t in y {
        let lps = model.next_token_logprobs(&h.tokens, x)?;
        h = h.extend(t, lps[t as usize], model.eos_id())?;
    }
    Ok(h)
}
