mod common;

use std::collections::BTreeMap;

use common::*;
use faithdec::harness::{synthetic_fit_data, CorpusConfig};
use faithdec::metrics::*;
use rand::Rng;

fn planted() -> (Vec<String>, Vec<f64>, f64) {
    (
        COMPOSITE_FEATURES.iter().map(|s| s.to_string()).collect(),
        vec![0.29, -0.29, 1.97, 0.94],
        -1.91,
    )
}

#[test]
fn planted_coefficients_are_recovered() {
    let (names, w, b) = planted();
    let mut r = rng(40);
    let features: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| r.gen::<f64>()).collect()).collect();
    let labels: Vec<f64> = features
        .iter()
        .map(|f| f.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b)
        .collect();
    let fit = fit_composite(&names, &features, &labels).unwrap();
    for (n, want) in names.iter().zip(&w) {
        let got = fit.weights[n];
        assert!(((got - want) / want).abs() < 1e-6, "{n}: {got}");
    }
    assert!(((fit.intercept - b) / b).abs() < 1e-6);
}

#[test]
fn rouge_matches_exhaustive_lcs_for_short_strings() {
    let mut pairs = 0u64;
    exhaustive_lcs_pairs(3, 5, |a, b, l| {
        assert_eq!(lcs_len(a, b), l, "{a:?} {b:?}");
        assert_eq!(rouge_l_f1(a, b), oracle_rouge(l, a.len(), b.len()));
        pairs += 1;
    });
    assert_eq!(pairs, 364 * 364);
}

#[test]
fn rouge_examples() {
    let (the, cat, sat, ran) = (1, 2, 3, 4);
    assert_eq!(lcs_len(&[the, cat, sat], &[the, cat, ran]), 2);
    assert!((rouge_l_f1(&[the, cat, sat], &[the, cat, ran]) - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(rouge_l_f1(&[1, 2], &[1, 2]), 1.0);
    assert_eq!(rouge_l_f1(&[1, 2], &[3, 4]), 0.0);
}

#[test]
fn scaling_the_composite_preserves_the_ranking_argmax() {
    let (names, w, b) = planted();
    let metric = CompositeMetric {
        weights: names.iter().cloned().zip(w).collect(),
        intercept: b,
    };
    let doubled = metric.scaled(2.0);
    let mut r = rng(41);
    for _ in 0..200 {
        let cands: Vec<BTreeMap<String, f64>> = (0..5)
            .map(|_| names.iter().map(|n| (n.clone(), r.gen::<f64>())).collect())
            .collect();
        let s1: Vec<f64> = cands.iter().map(|c| metric.score(c).unwrap()).collect();
        let s2: Vec<f64> = cands.iter().map(|c| doubled.score(c).unwrap()).collect();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
        let arg = |s: &[f64]| (0..s.len()).max_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap();
        assert_eq!(arg(&s1), arg(&s2));
    }
}

#[test]
fn synthetic_fit_data_yields_a_usable_composite() {
    let data = synthetic_fit_data(&CorpusConfig::default(), 500, 3).unwrap();
    assert_eq!(data.features.len(), 500);
    let metric = data.fit().unwrap();
    let scorer = CompositeScorer::new(metric).unwrap();
    // a faithful copy outranks a fully hallucinated summary
    let source = [2, 3, 4, 5, 6];
    assert!(scorer.score(&[3, 4, 5], &source) > scorer.score(&[30, 31, 32], &source));
}

#[test]
fn combined_heuristic_interpolates() {
    let mut r = rng(42);
    for _ in 0..100 {
        let s: Vec<u32> = (0..5).map(|_| r.gen_range(2..12)).collect();
        let x: Vec<u32> = (0..8).map(|_| r.gen_range(2..12)).collect();
        let a: f64 = r.gen();
        let c = CombinedScorer::new(CombinedHeuristicConfig::new(a).unwrap());
        let want = a * source_precision(&s, &x) + (1.0 - a) * novelty(&s, &x);
        assert!((c.score(&s, &x) - want).abs() < 1e-12);
    }
}

#[test]
fn proxies_stay_in_the_unit_interval() {
    let mut r = rng(43);
    for name in COMPOSITE_FEATURES.iter().chain(["novelty"].iter()) {
        let s = basic_scorer(name).unwrap();
        for _ in 0..300 {
            let n = r.gen_range(0..8);
            let sum: Vec<u32> = (0..n).map(|_| r.gen_range(2..10)).collect();
            let src: Vec<u32> = (0..r.gen_range(1..10)).map(|_| r.gen_range(2..10)).collect();
            let v = s.score(&sum, &src);
            assert!((0.0..=1.0).contains(&v), "{name}: {v}");
        }
    }
}
