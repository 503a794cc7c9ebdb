//! Decoding distillation: a teacher decoded with a faithfulness-aware recipe
//! produces pseudo-labels, and a fresh student of the same architecture is
//! trained on `XE(references) + lambda * XE(pseudo-labels)`. The iterative
//! variant promotes each trained student to teacher for the next round.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoders::greedy_decode;
use crate::domain::{Document, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::Scorer;
use crate::models::{descend, ConditionalModel, Example, LogLinearModel, Params, TrainConfig};
use crate::recipe::{run_recipe, Recipe, RecipeContext};

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledExample {
    pub source: Document,
    /// Gold reference, EOS-terminated.
    pub reference: Vec<TokenId>,
    /// Teacher output, EOS-terminated.
    pub generated: Vec<TokenId>,
    pub teacher_strategy: String,
    pub seed: u64,
}

/// JSON Lines record; token sequences are written as strings without EOS.
#[derive(Debug, Serialize, Deserialize)]
struct PseudoLabelRecord {
    id: String,
    source: Vec<String>,
    reference: Vec<String>,
    generated: Vec<String>,
    teacher_strategy: String,
    seed: u64,
}

fn to_words(vocab: &Vocabulary, tokens: &[TokenId]) -> Result<Vec<String>> {
    tokens
        .iter()
        .filter(|&&t| t != vocab.eos_id())
        .map(|&t| vocab.token(t).map(str::to_string))
        .collect()
}

fn from_words(vocab: &Vocabulary, words: &[String], terminate: bool) -> Result<Vec<TokenId>> {
    let mut ids = words
        .iter()
        .map(|w| vocab.id(w).ok_or_else(|| Error::UnknownToken(w.clone())))
        .collect::<Result<Vec<_>>>()?;
    if terminate {
        ids.push(vocab.eos_id());
    }
    Ok(ids)
}

pub fn write_pseudo_labels<W: Write>(
    mut w: W,
    vocab: &Vocabulary,
    data: &[PseudoLabeledExample],
) -> Result<()> {
    for ex in data {
        let rec = PseudoLabelRecord {
            id: ex.source.id.clone(),
            source: to_words(vocab, &ex.source.tokens)?,
            reference: to_words(vocab, &ex.reference)?,
            generated: to_words(vocab, &ex.generated)?,
            teacher_strategy: ex.teacher_strategy.clone(),
            seed: ex.seed,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pseudo_labels<R: BufRead>(r: R, vocab: &Vocabulary) -> Result<Vec<PseudoLabeledExample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PseudoLabelRecord = serde_json::from_str(&line)?;
        out.push(PseudoLabeledExample {
            source: Document::new(rec.id, from_words(vocab, &rec.source, false)?),
            reference: from_words(vocab, &rec.reference, true)?,
            generated: from_words(vocab, &rec.generated, true)?,
            teacher_strategy: rec.teacher_strategy,
            seed: rec.seed,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    /// Weight of the pseudo-label cross-entropy term.
    pub lambda: f64,
    pub teacher: Recipe,
    pub iterations: usize,
    pub train: TrainConfig,
    /// Seed of the fresh student initialization.
    pub init_seed: u64,
    /// Fraction of the training split used for distillation.
    pub label_fraction: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lambda: 1.0,
            teacher: Recipe::BeamLookaheadRanking { width: 10 },
            iterations: 1,
            train: TrainConfig::default(),
            init_seed: 11,
            label_fraction: 1.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda must be finite and >= 0"));
        }
        if self.iterations == 0 {
            return Err(Error::config("iterations must be at least 1"));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(Error::config("label_fraction must lie in (0, 1]"));
        }
        self.train.validate()
    }
}

/// Decodes every source with the teacher. Output order follows `corpus`.
pub fn generate_pseudo_labels<M: ConditionalModel + ?Sized>(
    teacher: &M,
    recipe: &Recipe,
    corpus: &[(Document, Vec<TokenId>)],
    ctx: &RecipeContext<'_>,
) -> Result<Vec<PseudoLabeledExample>> {
    let name = recipe.to_string();
    corpus
        .par_iter()
        .map(|(doc, reference)| {
            let h = run_recipe(teacher, doc, recipe, ctx)?;
            Ok(PseudoLabeledExample {
                source: doc.clone(),
                reference: reference.clone(),
                generated: h.tokens,
                teacher_strategy: name.clone(),
                seed: ctx.decode.seed,
            })
        })
        .collect()
}

/// `XE(references) + lambda * XE(generated)` and its gradient.
pub fn distill_loss_and_grad(
    student: &LogLinearModel,
    batch: &[&PseudoLabeledExample],
    lambda: f64,
    l2: f64,
) -> Result<(f64, Params)> {
    if !(lambda >= 0.0) {
        return Err(Error::usage("lambda must be >= 0"));
    }
    let refs: Vec<Example<'_>> = batch.iter().map(|e| (&e.source, e.reference.as_slice())).collect();
    let gens: Vec<Example<'_>> = batch.iter().map(|e| (&e.source, e.generated.as_slice())).collect();
    let (loss_ref, mut grads) = student.xe_loss_and_grad(&refs, l2)?;
    let (loss_gen, grads_gen) = student.xe_loss_and_grad(&gens, l2)?;
    grads.axpy(lambda, &grads_gen);
    Ok((loss_ref + lambda * loss_gen, grads))
}

pub fn distill_train(
    student: &LogLinearModel,
    data: &[PseudoLabeledExample],
    cfg: &DistillConfig,
) -> Result<LogLinearModel> {
    cfg.validate()?;
    let mut m = student.clone();
    descend(&mut m, data.len(), &cfg.train, |m, idx| {
        let batch: Vec<&PseudoLabeledExample> = idx.iter().map(|&i| &data[i]).collect();
        distill_loss_and_grad(m, &batch, cfg.lambda, cfg.train.l2)
    })?;
    Ok(m)
}

#[derive(Debug, Clone)]
pub struct DistillRound {
    /// 1-based; round 1 is taught by the initial teacher.
    pub round: usize,
    pub student: LogLinearModel,
    pub pseudo_labels: Vec<PseudoLabeledExample>,
    /// Mean scorer values of the student's greedy outputs on the evaluation
    /// documents.
    pub report: BTreeMap<String, f64>,
}

/// Mean scores of greedy outputs over `docs`.
pub fn greedy_report<M: ConditionalModel + ?Sized>(
    model: &M,
    docs: &[Document],
    scorers: &[&dyn Scorer],
    ctx: &RecipeContext<'_>,
) -> Result<BTreeMap<String, f64>> {
    let outs: Vec<Vec<f64>> = docs
        .par_iter()
        .map(|d| {
            let h = greedy_decode(model, d, &ctx.decode)?;
            Ok(scorers.iter().map(|s| s.score(h.content(), &d.tokens)).collect())
        })
        .collect::<Result<_>>()?;
    let n = docs.len().max(1) as f64;
    Ok(scorers
        .iter()
        .enumerate()
        .map(|(j, s)| (s.name().to_string(), outs.iter().map(|o| o[j]).sum::<f64>() / n))
        .collect())
}

/// Runs `cfg.iterations` rounds of teacher decoding and student training.
pub fn iterative_distill(
    cfg: &DistillConfig,
    vocab: &Vocabulary,
    corpus: &[(Document, Vec<TokenId>)],
    initial_teacher: &LogLinearModel,
    ctx: &RecipeContext<'_>,
    eval_docs: &[Document],
    scorers: &[&dyn Scorer],
) -> Result<Vec<DistillRound>> {
    cfg.validate()?;
    let used = ((corpus.len() as f64 * cfg.label_fraction).ceil() as usize).clamp(1, corpus.len());
    let corpus = &corpus[..used];
    let mut rounds: Vec<DistillRound> = Vec::with_capacity(cfg.iterations);
    for round in 1..=cfg.iterations {
        let teacher = rounds.last().map(|r| &r.student).unwrap_or(initial_teacher);
        let labels = generate_pseudo_labels(teacher, &cfg.teacher, corpus, ctx)?;
        let fresh = LogLinearModel::random(vocab, cfg.init_seed, 0.01);
        let student = distill_train(&fresh, &labels, cfg)?;
        let report = greedy_report(&student, eval_docs, scorers, ctx)?;
        rounds.push(DistillRound {
            round,
            student,
            pseudo_labels: labels,
            report,
        });
    }
    Ok(rounds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::synthetic(6).unwrap()
    }

    fn example(gen: Vec<TokenId>) -> PseudoLabeledExample {
        PseudoLabeledExample {
            source: Document::new("d0", vec![2, 3, 4]),
            reference: vec![2, 5, 1],
            generated: gen,
            teacher_strategy: "greedy".into(),
            seed: 3,
        }
    }

    #[test]
    fn zero_lambda_is_reference_xe() {
        let m = LogLinearModel::random(&vocab(), 1, 0.3);
        let ex = example(vec![3, 4, 1]);
        let (loss, grads) = distill_loss_and_grad(&m, &[&ex], 0.0, 1e-4).unwrap();
        let (ref_loss, ref_grads) = m
            .xe_loss_and_grad(&[(&ex.source, ex.reference.as_slice())], 1e-4)
            .unwrap();
        assert_eq!(loss, ref_loss);
        assert_eq!(grads, ref_grads);
    }

    #[test]
    fn identical_targets_double_the_loss() {
        let m = LogLinearModel::random(&vocab(), 2, 0.3);
        let ex = example(vec![2, 5, 1]);
        let (loss, grads) = distill_loss_and_grad(&m, &[&ex], 1.0, 0.0).unwrap();
        let (ref_loss, ref_grads) = m
            .xe_loss_and_grad(&[(&ex.source, ex.reference.as_slice())], 0.0)
            .unwrap();
        assert!((loss - 2.0 * ref_loss).abs() < 1e-12);
        for (a, b) in grads.iter().zip(ref_grads.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_linear_in_lambda() {
        let m = LogLinearModel::random(&vocab(), 3, 0.3);
        let ex = example(vec![3, 4, 1]);
        let lambda = 0.7;
        let (l1, _) = distill_loss_and_grad(&m, &[&ex], lambda, 1e-4).unwrap();
        let (l2, _) = distill_loss_and_grad(&m, &[&ex], 2.0 * lambda, 1e-4).unwrap();
        let (gen, _) = m
            .xe_loss_and_grad(&[(&ex.source, ex.generated.as_slice())], 1e-4)
            .unwrap();
        assert!((l2 - l1 - lambda * gen).abs() < 1e-12);
    }

    #[test]
    fn jsonl_round_trip() {
        let v = vocab();
        let data = vec![example(vec![3, 4, 1]), example(vec![1])];
        let mut buf = Vec::new();
        write_pseudo_labels(&mut buf, &v, &data).unwrap();
        let first: serde_json::Value =
            serde_json::from_str(String::from_utf8(buf.clone()).unwrap().lines().next().unwrap())
                .unwrap();
        for key in ["id", "source", "reference", "generated", "teacher_strategy", "seed"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        assert_eq!(read_pseudo_labels(&buf[..], &v).unwrap(), data);
    }

    #[test]
    fn config_validation() {
        let mut cfg = DistillConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.iterations = 0;
        assert!(cfg.validate().is_err());
        cfg.iterations = 1;
        cfg.lambda = -1.0;
        assert!(cfg.validate().is_err());
    }
}
