mod common;

use faithdec::harness::*;
use faithdec::metrics::source_precision;
use faithdec::models::TrainConfig;
use faithdec::recipe::Recipe;

fn small_lab(recipes: &[&str]) -> Lab {
    Lab::build(ExperimentConfig {
        corpus: CorpusConfig {
            train_docs: 300,
            dev_docs: 20,
            test_docs: 40,
            ..CorpusConfig::default()
        },
        train: TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        },
        recipes: recipes.iter().map(|s| s.to_string()).collect(),
        composite_fit_rows: 300,
        seed: Some(3),
        ..ExperimentConfig::default()
    })
    .unwrap()
}

#[test]
fn full_corruption_leaves_almost_no_support() {
    let c = generate_corpus(&CorpusConfig {
        hallucination_rate: 1.0,
        ..CorpusConfig::default()
    })
    .unwrap();
    let all: Vec<_> = c.train.iter().chain(&c.dev).chain(&c.test).collect();
    let mean = all
        .iter()
        .map(|(d, r)| source_precision(&r[..r.len() - 1], &d.tokens))
        .sum::<f64>()
        / all.len() as f64;
    assert!(mean <= 0.05, "{mean}");
}

#[test]
fn default_corpus_shape() {
    let c = generate_corpus(&CorpusConfig::default()).unwrap();
    assert_eq!((c.train.len(), c.dev.len(), c.test.len()), (2000, 200, 500));
    assert_eq!(c, generate_corpus(&CorpusConfig::default()).unwrap());
    let other = generate_corpus(&CorpusConfig {
        seed: 8,
        ..CorpusConfig::default()
    })
    .unwrap();
    assert_ne!(c.train, other.train);
}

#[test]
fn greedy_and_width_one_beam_rows_agree() {
    let lab = small_lab(&["greedy", "beam:1"]);
    let t = run_experiment(&lab).unwrap();
    for col in &lab.config.scorers {
        assert_eq!(t.value("greedy", col), t.value("beam:1", col), "{col}");
    }
    assert_eq!(t.value("greedy", "model_calls"), t.value("beam:1", "model_calls"));
}

#[test]
fn reruns_are_identical_apart_from_wall_clock() {
    let a = run_experiment(&small_lab(&["greedy", "nucleus:0.9", "beam-ranking:3"])).unwrap();
    let b = run_experiment(&small_lab(&["greedy", "nucleus:0.9", "beam-ranking:3"])).unwrap();
    assert_eq!(a.columns, b.columns);
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for (j, col) in a.columns.iter().enumerate() {
            if !TIMING_COLUMNS.contains(&col.as_str()) {
                assert_eq!(ra[j], rb[j], "{col}");
            }
        }
    }
}

#[test]
fn sweep_endpoints_match_greedy() {
    let lab = small_lab(&["greedy"]);
    let base = run_experiment(&lab).unwrap();
    let beams = sweep(&lab, SweepAxis::BeamSize, &[1.0, 3.0]).unwrap();
    let tops = sweep(&lab, SweepAxis::TopP, &[1e-9, 0.9]).unwrap();
    for t in [&beams, &tops] {
        let first = &t.rows[0][1];
        for row in t.rows.iter().filter(|r| &r[1] == first) {
            let scorer = match &row[3] {
                Cell::Text(s) => s.clone(),
                _ => unreachable!(),
            };
            if scorer == "rouge_l" {
                continue;
            }
            assert_eq!(row[4].as_f64(), base.value("greedy", &scorer), "{scorer}");
        }
    }
    assert!(sweep(&lab, SweepAxis::BeamSize, &[0.5]).unwrap_err().is_config());
    assert!(sweep(&lab, SweepAxis::TopP, &[]).unwrap_err().is_config());
}

#[test]
fn model_call_counts() {
    let lab = small_lab(&["greedy"]);
    let pairs = &lab.corpus.test[..10];
    let (greedy, lookahead) = lab
        .with_context(&lab.config.lookahead, |ctx| {
            Ok((
                timing(&lab.model, pairs, &Recipe::Greedy, ctx, 3)?,
                timing(&lab.model, pairs, &Recipe::GreedyLookahead, ctx, 3)?,
            ))
        })
        .unwrap();
    let run = lab
        .with_context(&lab.config.lookahead, |ctx| decode_split(&lab.model, pairs, &Recipe::Greedy, ctx))
        .unwrap();
    for (calls, h) in greedy.calls.iter().zip(&run.outputs) {
        assert_eq!(*calls, h.len() as u64);
    }
    for (g, l) in greedy.calls.iter().zip(&lookahead.calls) {
        assert!(*l >= 5 * g, "{l} < 5 * {g}");
    }
    assert!(greedy.median_sec_per_summary >= 0.0);
    assert!(lab
        .with_context(&lab.config.lookahead, |ctx| timing(&lab.model, pairs, &Recipe::Greedy, ctx, 2))
        .unwrap_err()
        .is_config());
}

#[test]
fn weight_tuning_picks_from_the_grid() {
    let lab = small_lab(&["greedy"]);
    let grid = [5.0, 25.0];
    let (best, scores) = tune_lookahead_weight(&lab, &Recipe::GreedyLookahead, &grid).unwrap();
    assert!(grid.contains(&best));
    assert_eq!(scores.len(), 2);
    assert_eq!(weight_grid().first(), Some(&5.0));
    assert_eq!(weight_grid().last(), Some(&55.0));
}

#[test]
fn reports_save_as_csv_and_json() {
    let lab = small_lab(&["greedy"]);
    let t = run_experiment(&lab).unwrap();
    let dir = tempfile::tempdir().unwrap();
    t.save(dir.path(), "table", &lab.config).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert!(csv.starts_with("recipe,docs,source_precision"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("table.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 3);
    assert_eq!(json["rows"][0]["recipe"], "greedy");
}

#[test]
fn unknown_inputs_are_config_errors() {
    let lab = small_lab(&["greedy"]);
    assert!(lab.scorer("bleurt").err().unwrap().is_config());
    assert!(lab.scorer("combined:2").err().unwrap().is_config());
    assert!(lab.corpus.split("validation").unwrap_err().is_config());
    assert!("sideways".parse::<SweepAxis>().unwrap_err().is_config());
}
