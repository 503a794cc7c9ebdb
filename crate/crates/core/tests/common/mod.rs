#![allow(dead_code)]

use faithdec::models::{LogLinearModel, SyntheticModel};
use faithdec::{Document, TokenId, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn vocab(n: usize) -> Vocabulary {
    Vocabulary::synthetic(n).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random source over the content tokens of `v`.
pub fn random_doc(v: &Vocabulary, rng: &mut ChaCha8Rng, max_len: usize) -> Document {
    let n = rng.gen_range(1..=max_len);
    let content: Vec<TokenId> = v.content_ids().collect();
    let tokens = (0..n).map(|_| content[rng.gen_range(0..content.len())]).collect();
    Document::new(format!("doc-{}", rng.gen::<u32>()), tokens)
}

/// Alternates between a prefix-sensitive synthetic model and a random
/// log-linear model.
pub fn random_model(v: &Vocabulary, i: u64) -> Box<dyn faithdec::models::ConditionalModel> {
    if i % 2 == 0 {
        Box::new(SyntheticModel::new(v, 1000 + i, 2.5).with_copy_bonus(0.5))
    } else {
        Box::new(LogLinearModel::random(v, 2000 + i, 2.0))
    }
}

/// Independent log-softmax.
pub fn oracle_log_softmax(logits: &[f64]) -> Vec<f64> {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    logits.iter().map(|l| l - z.ln()).collect()
}

/// `||analytic - numeric|| / max(||analytic||, ||numeric||)` where `numeric`
/// is the central difference of `loss` with step `eps` on every parameter.
pub fn gradient_rel_error(
    model: &LogLinearModel,
    analytic: &faithdec::models::Params,
    eps: f64,
    loss: impl Fn(&LogLinearModel) -> f64,
) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for i in 0..model.params.len() {
        let mut up = model.clone();
        up.params.set(i, model.params.get(i) + eps);
        let mut down = model.clone();
        down.params.set(i, model.params.get(i) - eps);
        let numeric = (loss(&up) - loss(&down)) / (2.0 * eps);
        let a = analytic.get(i);
        diff += (a - numeric).powi(2);
        na += a * a;
        nn += numeric * numeric;
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-300)
}

/// Random EOS-terminated target over the content tokens of `v`.
pub fn random_target(v: &Vocabulary, rng: &mut ChaCha8Rng, max_len: usize) -> Vec<TokenId> {
    let content: Vec<TokenId> = v.content_ids().collect();
    let n = rng.gen_range(0..max_len);
    let mut y: Vec<TokenId> = (0..n).map(|_| content[rng.gen_range(0..content.len())]).collect();
    y.push(v.eos_id());
    y
}

fn oracle_precision(summary: &[TokenId], source: &[TokenId]) -> f64 {
    if summary.is_empty() {
        return 0.0;
    }
    summary.iter().filter(|t| source.contains(t)).count() as f64 / summary.len() as f64
}

fn oracle_lps(
    m: &dyn faithdec::models::ConditionalModel,
    prefix: &[TokenId],
    x: &Document,
    max_len: usize,
) -> Vec<(TokenId, f64)> {
    let lps = m.next_token_logprobs(prefix, x).unwrap();
    let mut ranked: Vec<(TokenId, f64)> = (0..m.vocab_size() as TokenId)
        .filter(|&t| t != m.bos_id())
        .filter(|&t| prefix.len() + 1 < max_len || t == m.eos_id())
        .map(|t| (t, lps[t as usize]))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Independent greedy-base lookahead with greedy full rollouts and
/// source-precision heuristic. Returns the decoded tokens and, per step, the
/// (token, selection score) pool.
pub fn oracle_lookahead(
    m: &dyn faithdec::models::ConditionalModel,
    x: &Document,
    weight: f64,
    cap: usize,
    max_len: usize,
) -> (Vec<TokenId>, Vec<Vec<(TokenId, f64)>>) {
    let eos = m.eos_id();
    let mut prefix: Vec<TokenId> = Vec::new();
    let mut logprob = 0.0;
    let mut steps = Vec::new();
    loop {
        let pool: Vec<(TokenId, f64)> = oracle_lps(m, &prefix, x, max_len)
            .into_iter()
            .take(cap)
            .map(|(t, lp)| {
                let mut roll = prefix.clone();
                roll.push(t);
                while *roll.last().unwrap() != eos {
                    let next = oracle_lps(m, &roll, x, max_len)[0].0;
                    roll.push(next);
                }
                let content = &roll[..roll.len() - 1];
                (t, logprob + lp + weight * oracle_precision(content, &x.tokens))
            })
            .collect();
        let mut best = 0;
        for i in 1..pool.len() {
            if pool[i].1 > pool[best].1 {
                best = i;
            }
        }
        let t = pool[best].0;
        logprob += m.next_token_logprobs(&prefix, x).unwrap()[t as usize];
        steps.push(pool);
        prefix.push(t);
        if t == eos {
            return (prefix, steps);
        }
    }
}

/// Every sequence over `{0, .., alphabet-1}` of length at most `max_len`,
/// shortest first, then lexicographic.
pub fn all_strings(alphabet: u32, max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![vec![]];
    let mut layer = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &layer {
            for c in 0..alphabet {
                let mut t: Vec<TokenId> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// LCS lengths by exhaustive subsequence search, for every pair drawn from
/// `all_strings(alphabet, max_len)`. Calls `visit(a, b, lcs)` for each pair.
///
/// For a fixed `b`, the set of all subsequences of `b` is enumerated
/// explicitly; `lcs(a, b)` is `|a|` when `a` is in that set and otherwise the
/// best over the one-deletion subsequences of `a`.
pub fn exhaustive_lcs_pairs(alphabet: u32, max_len: usize, mut visit: impl FnMut(&[TokenId], &[TokenId], usize)) {
    let strings = all_strings(alphabet, max_len);
    let index: std::collections::HashMap<Vec<TokenId>, usize> =
        strings.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let deletions: Vec<Vec<usize>> = strings
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|i| {
                    let mut t = s.clone();
                    t.remove(i);
                    index[&t]
                })
                .collect()
        })
        .collect();
    let mut in_b = vec![false; strings.len()];
    let mut best = vec![0usize; strings.len()];
    for b in &strings {
        in_b.iter_mut().for_each(|x| *x = false);
        for mask in 0u32..(1 << b.len()) {
            let sub: Vec<TokenId> = (0..b.len()).filter(|&i| mask >> i & 1 == 1).map(|i| b[i]).collect();
            in_b[index[&sub]] = true;
        }
        // strings are ordered by length, so deletions are already solved
        for (i, a) in strings.iter().enumerate() {
            best[i] = if in_b[i] {
                a.len()
            } else {
                deletions[i].iter().map(|&j| best[j]).max().unwrap_or(0)
            };
            visit(a, b, best[i]);
        }
    }
}

/// ROUGE-L F1 from an LCS length.
pub fn oracle_rouge(lcs: usize, cand: usize, reference: usize) -> f64 {
    if cand == 0 || reference == 0 {
        return 0.0;
    }
    let p = lcs as f64 / cand as f64;
    let r = lcs as f64 / reference as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}
