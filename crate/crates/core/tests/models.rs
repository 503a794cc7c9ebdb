mod common;

use common::*;
use faithdec::models::*;
use faithdec::{Document, Vocabulary};

fn abcd() -> Vocabulary {
    Vocabulary::new(
        ["<s>", "</s>", "a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
        0,
        1,
    )
    .unwrap()
}

#[test]
fn xe_gradient_matches_finite_differences() {
    let v = vocab(5);
    let mut r = rng(10);
    for i in 0..50 {
        let m = LogLinearModel::random(&v, 300 + i, 1.0);
        let docs: Vec<Document> = (0..3).map(|_| random_doc(&v, &mut r, 4)).collect();
        let ys: Vec<Vec<u32>> = (0..3).map(|_| random_target(&v, &mut r, 5)).collect();
        let batch: Vec<Example<'_>> = docs.iter().zip(&ys).map(|(d, y)| (d, y.as_slice())).collect();
        let l2 = 1e-3;
        let (_, grads) = m.xe_loss_and_grad(&batch, l2).unwrap();
        let err = gradient_rel_error(&m, &grads, 1e-5, |mm| mm.xe_loss_and_grad(&batch, l2).unwrap().0);
        assert!(err < 1e-4, "point {i}: relative error {err}");
    }
}

#[test]
fn duplicated_batches_leave_loss_and_grads_unchanged() {
    let v = vocab(6);
    let mut r = rng(11);
    let m = LogLinearModel::random(&v, 1, 0.5);
    let docs: Vec<Document> = (0..4).map(|_| random_doc(&v, &mut r, 5)).collect();
    let ys: Vec<Vec<u32>> = (0..4).map(|_| random_target(&v, &mut r, 6)).collect();
    let batch: Vec<Example<'_>> = docs.iter().zip(&ys).map(|(d, y)| (d, y.as_slice())).collect();
    let doubled: Vec<Example<'_>> = batch.iter().chain(batch.iter()).copied().collect();
    let (l1, g1) = m.xe_loss_and_grad(&batch, 1e-4).unwrap();
    let (l2, g2) = m.xe_loss_and_grad(&doubled, 1e-4).unwrap();
    assert!((l1 - l2).abs() < 1e-12);
    for (a, b) in g1.iter().zip(g2.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn strong_copy_gate_picks_the_source_token() {
    let v = abcd();
    let mut p = Params::zeros(v.len());
    p.copy_gate.iter_mut().for_each(|g| *g = 10.0);
    let m = LogLinearModel::from_params(&v, p).unwrap();
    let a = v.id("a").unwrap();
    let x = Document::new("d", vec![a]);
    let lps = m.next_token_logprobs(&[], &x).unwrap();
    // oracle: logits are 10 for "a" and 0 elsewhere
    let mut logits = vec![0.0; v.len()];
    logits[a as usize] = 10.0;
    let expect = oracle_log_softmax(&logits);
    for (got, want) in lps.iter().zip(&expect) {
        assert!((got - want).abs() < 1e-12);
    }
    let best = (0..v.len()).max_by(|&i, &j| lps[i].total_cmp(&lps[j])).unwrap();
    assert_eq!(best as u32, a);
}

#[test]
fn raising_the_copy_gate_never_lowers_source_mass() {
    let v = vocab(7);
    let mut r = rng(12);
    for i in 0..100 {
        let m = LogLinearModel::random(&v, 50 + i, 1.0);
        let x = random_doc(&v, &mut r, 3);
        let mass = |m: &LogLinearModel| -> f64 {
            let lps = m.next_token_logprobs(&[x.tokens[0]], &x).unwrap();
            x.support_mask(v.len())
                .iter()
                .enumerate()
                .filter(|(_, &s)| s)
                .map(|(t, _)| lps[t].exp())
                .sum()
        };
        let mut boosted = m.clone();
        boosted.params.copy_gate.iter_mut().for_each(|g| *g += 1.0);
        assert!(mass(&boosted) >= mass(&m) - 1e-12);
    }
}

#[test]
fn learns_a_deterministic_successor() {
    let v = abcd();
    let (a, b, c) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
    let docs: Vec<Document> = (0..8).map(|i| Document::new(format!("d{i}"), vec![a, b, c])).collect();
    let ys: Vec<Vec<u32>> = (0..8)
        .map(|i| if i % 2 == 0 { vec![a, b, v.eos_id()] } else { vec![c, a, b, v.eos_id()] })
        .collect();
    let corpus: Vec<Example<'_>> = docs.iter().zip(&ys).map(|(d, y)| (d, y.as_slice())).collect();
    let cfg = TrainConfig {
        learning_rate: 0.5,
        epochs: 200,
        batch_size: 4,
        seed: 1,
        l2: 0.0,
    };
    let m = train(&LogLinearModel::zeros(&v), &corpus, &cfg).unwrap();
    let lps = m.next_token_logprobs(&[a], &docs[0]).unwrap();
    let best = (0..v.len()).max_by(|&i, &j| lps[i].total_cmp(&lps[j])).unwrap();
    assert_eq!(best as u32, b);
}

#[test]
fn single_pair_loss_drops_below_a_tenth_of_a_nat_per_token() {
    let v = abcd();
    let x = Document::new("d", vec![2, 3, 4]);
    let y = vec![2, 4, 3, v.eos_id()];
    let corpus: Vec<Example<'_>> = vec![(&x, y.as_slice())];
    let cfg = TrainConfig {
        learning_rate: 0.5,
        epochs: 500,
        batch_size: 1,
        seed: 3,
        l2: 0.0,
    };
    let (_, history) = train_logged(&LogLinearModel::zeros(&v), &corpus, &cfg).unwrap();
    let per_token = history.last().unwrap() / y.len() as f64;
    assert!(per_token < 0.1, "{per_token}");
}

#[test]
fn full_batch_descent_with_a_small_step_never_raises_the_loss() {
    let v = vocab(6);
    let mut r = rng(13);
    let docs: Vec<Document> = (0..20).map(|_| random_doc(&v, &mut r, 5)).collect();
    let ys: Vec<Vec<u32>> = (0..20).map(|_| random_target(&v, &mut r, 6)).collect();
    let corpus: Vec<Example<'_>> = docs.iter().zip(&ys).map(|(d, y)| (d, y.as_slice())).collect();
    let cfg = TrainConfig {
        learning_rate: 0.05,
        epochs: 50,
        batch_size: 20,
        seed: 4,
        l2: 1e-4,
    };
    let (_, history) = train_logged(&LogLinearModel::random(&v, 9, 0.5), &corpus, &cfg).unwrap();
    assert!(history.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{history:?}");
}

#[test]
fn equal_seeds_give_identical_parameters() {
    let v = vocab(6);
    let mut r = rng(14);
    let docs: Vec<Document> = (0..30).map(|_| random_doc(&v, &mut r, 5)).collect();
    let ys: Vec<Vec<u32>> = (0..30).map(|_| random_target(&v, &mut r, 6)).collect();
    let corpus: Vec<Example<'_>> = docs.iter().zip(&ys).map(|(d, y)| (d, y.as_slice())).collect();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 7,
        ..TrainConfig::default()
    };
    let a = train(&LogLinearModel::zeros(&v), &corpus, &cfg).unwrap();
    let b = train(&LogLinearModel::zeros(&v), &corpus, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    let c = train(&LogLinearModel::zeros(&v), &corpus, &TrainConfig { seed: 99, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn divergent_training_reports_the_epoch() {
    let v = vocab(6);
    let x = Document::new("d", vec![2]);
    let y = vec![2, 3, v.eos_id()];
    let corpus: Vec<Example<'_>> = vec![(&x, y.as_slice())];
    let cfg = TrainConfig {
        learning_rate: 1e308,
        epochs: 3,
        batch_size: 1,
        seed: 0,
        l2: 1.0,
    };
    let err = train(&LogLinearModel::random(&v, 1, 1.0), &corpus, &cfg).unwrap_err();
    assert!(matches!(err, faithdec::Error::NonFinite { .. }), "{err}");
}

#[test]
fn forced_decoding_agrees_with_sequence_logprob() {
    let v = vocab(7);
    let mut r = rng(15);
    for i in 0..500 {
        let m = random_model(&v, i);
        let x = random_doc(&v, &mut r, 6);
        let y = random_target(&v, &mut r, 7);
        let h = forced_decode(m.as_ref(), &y, &x).unwrap();
        let s = sequence_logprob(m.as_ref(), &y, &x).unwrap();
        assert!((h.logprob - s).abs() < 1e-10);
        assert!(h.finished);
        assert_eq!(h.tokens, y);
    }
}

#[test]
fn uniform_model_sequence_logprob() {
    let v = vocab(4);
    let m = LogLinearModel::zeros(&v);
    let x = Document::new("d", vec![2]);
    let s = sequence_logprob(&m, &[2, 3, 2], &x).unwrap();
    assert!((s - 3.0 * -(4f64.ln())).abs() < 1e-12);
    assert_eq!(sequence_logprob(&m, &[], &x).unwrap(), 0.0);
}

#[test]
fn call_counter_counts_decoder_steps() {
    let v = vocab(6);
    let m = CallCounter::new(SyntheticModel::new(&v, 3, 1.0));
    let x = Document::new("d", vec![2, 3]);
    let h = faithdec::decoders::greedy_decode(&m, &x, &Default::default()).unwrap();
    assert_eq!(m.calls(), h.len() as u64);
}
