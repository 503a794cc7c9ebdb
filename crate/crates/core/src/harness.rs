//! Synthetic corpora, experiment orchestration and report emission.
//!
//! Sources come from a seeded sparse Markov template. References copy a
//! source span, skipping tokens with probability `compression_rate`, and
//! replace each token, with probability `hallucination_rate`, by a token
//! absent from the source. Replacements follow a fixed per-token "associate"
//! map when possible, keyed either on the replaced token or on the preceding
//! reference token, so the corruption is learnable the way a language prior
//! is.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoders::DecodeConfig;
use crate::domain::{Document, Hypothesis, TokenId, Vocabulary};
use crate::error::{Error, Result};
use crate::guided::LookaheadConfig;
use crate::metrics::{
    basic_scorer, rouge_l_f1, CombinedHeuristicConfig, CombinedScorer, CompositeMetric,
    CompositeScorer, FitData, Scorer, COMPOSITE_FEATURES,
};
use crate::models::{train, CallCounter, Example, LogLinearModel, TrainConfig};
use crate::recipe::{run_recipe, Recipe, RecipeContext};

/// A source document and its EOS-terminated reference.
pub type Pair = (Document, Vec<TokenId>);

pub fn as_examples(pairs: &[Pair]) -> Vec<Example<'_>> {
    pairs.iter().map(|(d, r)| (d, r.as_slice())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LenRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub vocab_size: usize,
    pub train_docs: usize,
    pub dev_docs: usize,
    pub test_docs: usize,
    pub source_len: LenRange,
    pub summary_len: LenRange,
    /// Probability that each reference token is replaced by an out-of-source
    /// token.
    pub hallucination_rate: f64,
    /// Probability of skipping a source token while copying a span.
    pub compression_rate: f64,
    /// Successors per token in the source Markov template.
    pub branching: usize,
    /// Share of replacements keyed on the preceding reference token (a
    /// language-prior confusion); the rest are keyed on the replaced token.
    pub prior_share: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            vocab_size: 48,
            train_docs: 2000,
            dev_docs: 200,
            test_docs: 500,
            source_len: LenRange { min: 12, max: 20 },
            summary_len: LenRange { min: 4, max: 8 },
            hallucination_rate: 0.3,
            compression_rate: 0.2,
            branching: 3,
            prior_share: 0.33,
            seed: 7,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 8 {
            return Err(Error::config("vocab_size must be at least 8"));
        }
        let r = |r: &LenRange, what: &str| {
            if r.min == 0 || r.min > r.max {
                Err(Error::config(format!("{what} range {}..={} is invalid", r.min, r.max)))
            } else {
                Ok(())
            }
        };
        r(&self.source_len, "source_len")?;
        r(&self.summary_len, "summary_len")?;
        if self.vocab_size - 2 <= self.source_len.max {
            return Err(Error::config(format!(
                "vocab_size {} leaves no out-of-source tokens for sources of length {}",
                self.vocab_size, self.source_len.max
            )));
        }
        if !(0.0..=1.0).contains(&self.hallucination_rate) {
            return Err(Error::config("hallucination_rate must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.prior_share) {
            return Err(Error::config("prior_share must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.compression_rate) {
            return Err(Error::config("compression_rate must lie in [0, 1)"));
        }
        if self.branching == 0 || self.branching > self.vocab_size - 2 {
            return Err(Error::config("branching must lie in 1..=|content tokens|"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub train: Vec<Pair>,
    pub dev: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl Corpus {
    pub fn split(&self, name: &str) -> Result<&[Pair]> {
        match name {
            "train" => Ok(&self.train),
            "dev" => Ok(&self.dev),
            "test" => Ok(&self.test),
            other => Err(Error::config(format!("unknown split {other:?}"))),
        }
    }
}

struct Template {
    successors: Vec<Vec<(TokenId, f64)>>,
    associate: Vec<TokenId>,
    content: Vec<TokenId>,
}

impl Template {
    fn new(vocab: &Vocabulary, branching: usize, rng: &mut ChaCha8Rng) -> Self {
        let content: Vec<TokenId> = vocab.content_ids().collect();
        // weights 1, 1/2, 1/3, ... normalized
        let norm: f64 = (1..=branching).map(|i| 1.0 / i as f64).sum();
        let successors = (0..vocab.len())
            .map(|_| {
                content
                    .choose_multiple(rng, branching)
                    .enumerate()
                    .map(|(i, &t)| (t, 1.0 / ((i + 1) as f64 * norm)))
                    .collect()
            })
            .collect();
        let associate = (0..vocab.len())
            .map(|_| *content.choose(rng).expect("content tokens exist"))
            .collect();
        Template {
            successors,
            associate,
            content,
        }
    }

    fn next(&self, prev: TokenId, rng: &mut ChaCha8Rng) -> TokenId {
        let succ = &self.successors[prev as usize];
        let mut u: f64 = rng.gen();
        for &(t, p) in succ {
            if u < p {
                return t;
            }
            u -= p;
        }
        succ[succ.len() - 1].0
    }
}

fn make_pair(
    id: String,
    cfg: &CorpusConfig,
    vocab: &Vocabulary,
    tpl: &Template,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Pair, usize) {
    let n = rng.gen_range(cfg.source_len.min..=cfg.source_len.max);
    let mut src = Vec::with_capacity(n);
    let mut prev = *tpl.content.choose(rng).expect("content tokens exist");
    src.push(prev);
    while src.len() < n {
        prev = tpl.next(prev, rng);
        src.push(prev);
    }
    let doc = Document::new(id, src);
    let support = doc.support_mask(vocab.len());
    let outside: Vec<TokenId> = tpl.content.iter().copied().filter(|&t| !support[t as usize]).collect();

    let len = rng.gen_range(cfg.summary_len.min..=cfg.summary_len.max).min(n);
    let mut pos = rng.gen_range(0..=n - len);
    let mut reference = Vec::with_capacity(len + 1);
    let mut corrupted = 0;
    while reference.len() < len && pos < n {
        // skipping is only allowed while enough source remains to fill the span
        let remaining = n - pos;
        let needed = len - reference.len();
        if !reference.is_empty() && remaining > needed && rng.gen::<f64>() < cfg.compression_rate {
            pos += 1;
            continue;
        }
        let mut t = doc.tokens[pos];
        pos += 1;
        if rng.gen::<f64>() < rate {
            let key = if rng.gen::<f64>() < cfg.prior_share {
                reference.last().copied().unwrap_or(vocab.bos_id())
            } else {
                t
            };
            let assoc = tpl.associate[key as usize];
            t = if support[assoc as usize] {
                *outside.choose(rng).expect("validated: out-of-source tokens exist")
            } else {
                assoc
            };
            corrupted += 1;
        }
        reference.push(t);
    }
    reference.push(vocab.eos_id());
    ((doc, reference), corrupted)
}

/// Generates train/dev/test splits. Deterministic given `cfg.seed`.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let vocab = Vocabulary::synthetic(cfg.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tpl = Template::new(&vocab, cfg.branching, &mut rng);
    let mut split = |name: &str, count: usize| -> Vec<Pair> {
        (0..count)
            .map(|i| {
                make_pair(
                    format!("{name}-{i:05}"),
                    cfg,
                    &vocab,
                    &tpl,
                    cfg.hallucination_rate,
                    &mut rng,
                )
                .0
            })
            .collect()
    };
    let train = split("train", cfg.train_docs);
    let dev = split("dev", cfg.dev_docs);
    let test = split("test", cfg.test_docs);
    Ok(Corpus {
        vocab,
        train,
        dev,
        test,
    })
}

/// Labeled data for fitting a composite metric: summaries drawn from the
/// corpus generator at random corruption rates, labeled by a noisy judgment
/// `0.6 * (1 - corrupted fraction) + 0.4 * [no corruption]`.
pub fn synthetic_fit_data(cfg: &CorpusConfig, rows: usize, seed: u64) -> Result<FitData> {
    cfg.validate()?;
    let vocab = Vocabulary::synthetic(cfg.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tpl = Template::new(&vocab, cfg.branching, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scorers: Vec<Box<dyn Scorer>> = COMPOSITE_FEATURES
        .iter()
        .map(|n| basic_scorer(n))
        .collect::<Result<_>>()?;
    let mut features = Vec::with_capacity(rows);
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        let rate = rng.gen::<f64>() * 0.6;
        let ((doc, reference), corrupted) =
            make_pair(format!("fit-{i}"), cfg, &vocab, &tpl, rate, &mut rng);
        let content = &reference[..reference.len() - 1];
        features.push(scorers.iter().map(|s| s.score(content, &doc.tokens)).collect());
        let frac = corrupted as f64 / content.len() as f64;
        let clean = if corrupted == 0 { 1.0 } else { 0.0 };
        labels.push(0.6 * (1.0 - frac) + 0.4 * clean + 0.1 * (rng.gen::<f64>() - 0.5));
    }
    Ok(FitData {
        names: COMPOSITE_FEATURES.iter().map(|s| s.to_string()).collect(),
        features,
        labels,
    })
}

#[derive(Serialize, Deserialize)]
struct CorpusRecord {
    id: String,
    source: Vec<String>,
    reference: Vec<String>,
}

/// Writes pairs as JSON Lines `{id, source, reference}` with token strings;
/// the reference omits EOS.
pub fn write_pairs<W: Write>(mut w: W, vocab: &Vocabulary, pairs: &[Pair]) -> Result<()> {
    for (doc, reference) in pairs {
        let words = |ts: &[TokenId]| -> Result<Vec<String>> {
            ts.iter()
                .filter(|&&t| t != vocab.eos_id())
                .map(|&t| vocab.token(t).map(str::to_string))
                .collect()
        };
        let rec = CorpusRecord {
            id: doc.id.clone(),
            source: words(&doc.tokens)?,
            reference: words(reference)?,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(r: R, vocab: &Vocabulary) -> Result<Vec<Pair>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)?;
        let ids = |ws: &[String]| -> Result<Vec<TokenId>> {
            ws.iter()
                .map(|w| vocab.id(w).ok_or_else(|| Error::UnknownToken(w.clone())))
                .collect()
        };
        let doc = Document::new(rec.id, ids(&rec.source)?);
        doc.validate(vocab)?;
        let mut reference = ids(&rec.reference)?;
        reference.push(vocab.eos_id());
        out.push((doc, reference));
    }
    Ok(out)
}

/// Writes `vocab.json` and `{train,dev,test}.jsonl` into `dir`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("vocab.json"), serde_json::to_string_pretty(&corpus.vocab)?)?;
    for (name, pairs) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{name}.jsonl")))?);
        write_pairs(f, &corpus.vocab, pairs)?;
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let vocab: Vocabulary = serde_json::from_str(&std::fs::read_to_string(dir.join("vocab.json"))?)?;
    let read = |name: &str| -> Result<Vec<Pair>> {
        let f = std::io::BufReader::new(std::fs::File::open(dir.join(format!("{name}.jsonl")))?);
        read_pairs(f, &vocab)
    };
    Ok(Corpus {
        train: read("train")?,
        dev: read("dev")?,
        test: read("test")?,
        vocab,
    })
}

/// A report cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => f.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(f) => Some(*f),
            Cell::Text(_) => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// A report with a fixed column set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub kind: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(kind: &str, columns: Vec<String>) -> Self {
        Table {
            kind: kind.to_string(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Shape(format!(
                "{} report row has {} cells, expected {}",
                self.kind,
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c) {
                return Err(Error::Shape(format!("duplicate column {c:?}")));
            }
        }
        if let Some(r) = self.rows.iter().find(|r| r.len() != self.columns.len()) {
            return Err(Error::Shape(format!(
                "row with {} cells in a {}-column report",
                r.len(),
                self.columns.len()
            )));
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn get(&self, row: usize, column: &str) -> Option<&Cell> {
        self.column(column).and_then(|j| self.rows.get(row).map(|r| &r[j]))
    }

    /// Row whose first cell renders as `key`.
    pub fn row_by_key(&self, key: &str) -> Option<usize> {
        self.rows.iter().position(|r| r[0].render() == key)
    }

    pub fn value(&self, key: &str, column: &str) -> Option<f64> {
        self.row_by_key(key)
            .and_then(|i| self.get(i, column))
            .and_then(Cell::as_f64)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.validate()?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.columns)?;
        for r in &self.rows {
            wr.write_record(r.iter().map(Cell::render))?;
        }
        wr.flush()?;
        Ok(())
    }

    /// JSON object `{kind, config, rows: [{column: value}]}`.
    pub fn to_json<C: Serialize>(&self, config: &C) -> Result<serde_json::Value> {
        self.validate()?;
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                self.columns
                    .iter()
                    .cloned()
                    .zip(r.iter().map(|c| serde_json::to_value(c).expect("cells serialize")))
                    .collect()
            })
            .collect();
        Ok(serde_json::json!({
            "kind": self.kind,
            "config": config,
            "rows": rows,
        }))
    }

    /// Writes `<stem>.csv` and `<stem>.json` under `dir`.
    pub fn save<C: Serialize>(&self, dir: &Path, stem: &str, config: &C) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let json = self.to_json(config)?;
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&json)? + "\n",
        )?;
        Ok(())
    }
}

/// Columns whose values depend on wall-clock time.
pub const TIMING_COLUMNS: [&str; 1] = ["sec_per_summary_median"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: CorpusConfig,
    /// Load a saved corpus instead of generating one.
    pub corpus_dir: Option<PathBuf>,
    pub train: TrainConfig,
    /// Load a trained model instead of training one.
    pub model: Option<PathBuf>,
    /// Recipe names, e.g. `greedy`, `beam:10`, `nucleus:0.9`.
    pub recipes: Vec<String>,
    pub scorers: Vec<String>,
    pub decode: DecodeConfig,
    pub lookahead: LookaheadConfig,
    pub rank_scorer: String,
    /// Load a fitted composite instead of fitting the default one.
    pub composite: Option<PathBuf>,
    pub composite_fit_rows: usize,
    pub split: String,
    pub output: Option<PathBuf>,
    /// Run seed for sampling; required.
    pub seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusConfig::default(),
            corpus_dir: None,
            train: TrainConfig::default(),
            model: None,
            recipes: vec!["greedy".into(), "beam:10".into(), "nucleus:0.9".into()],
            scorers: vec![
                "source_precision".into(),
                "bigram_support".into(),
                "arc_correctness".into(),
                "coverage_f1".into(),
                "novelty".into(),
                "composite".into(),
            ],
            decode: DecodeConfig::default(),
            lookahead: LookaheadConfig {
                scorer: "composite".into(),
                ..LookaheadConfig::default()
            },
            rank_scorer: "composite".into(),
            composite: None,
            composite_fit_rows: 2000,
            split: "test".into(),
            output: None,
            seed: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(Error::config("a run seed is required"));
        }
        self.corpus.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        self.lookahead.validate(self.corpus.vocab_size)?;
        self.parsed_recipes()?;
        Ok(())
    }

    pub fn parsed_recipes(&self) -> Result<Vec<Recipe>> {
        self.recipes.iter().map(|r| r.parse()).collect()
    }
}

/// A ready-to-run experiment: corpus, trained model, composite metric and
/// decoding settings.
pub struct Lab {
    pub config: ExperimentConfig,
    pub corpus: Corpus,
    pub model: LogLinearModel,
    pub composite: CompositeMetric,
}

impl Lab {
    /// Loads or generates the corpus, then loads or trains the model and
    /// loads or fits the composite.
    pub fn build(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let corpus = match &config.corpus_dir {
            Some(dir) => load_corpus(dir)?,
            None => generate_corpus(&config.corpus)?,
        };
        let model = match &config.model {
            Some(p) => LogLinearModel::from_json(&std::fs::read_to_string(p)?, &corpus.vocab)?,
            None => train_baseline(&corpus, &config.train)?,
        };
        let composite = match &config.composite {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
            None => default_composite(&config.corpus, config.composite_fit_rows)?,
        };
        let mut config = config;
        config.decode.seed = config.seed.expect("validated");
        Ok(Lab {
            config,
            corpus,
            model,
            composite,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.corpus.vocab
    }

    /// Resolves a scorer name: the basic proxies, `composite`, or
    /// `combined:<alpha>`.
    pub fn scorer(&self, name: &str) -> Result<Box<dyn Scorer>> {
        if name == "composite" {
            return Ok(Box::new(CompositeScorer::new(self.composite.clone())?));
        }
        if let Some(a) = name.strip_prefix("combined:") {
            let alpha: f64 = a
                .parse()
                .map_err(|_| Error::config(format!("bad alpha in scorer {name:?}")))?;
            return Ok(Box::new(CombinedScorer::new(CombinedHeuristicConfig::new(alpha)?)));
        }
        basic_scorer(name)
    }

    pub fn scorers(&self, names: &[String]) -> Result<Vec<Box<dyn Scorer>>> {
        names.iter().map(|n| self.scorer(n)).collect()
    }

    pub fn docs(&self) -> Result<&[Pair]> {
        self.corpus.split(&self.config.split)
    }

    /// Runs `f` with a recipe context built from this lab's settings.
    pub fn with_context<T>(
        &self,
        lookahead: &LookaheadConfig,
        f: impl FnOnce(&RecipeContext<'_>) -> Result<T>,
    ) -> Result<T> {
        let la = self.scorer(&lookahead.scorer)?;
        let rk = self.scorer(&self.config.rank_scorer)?;
        let ctx = RecipeContext {
            decode: self.config.decode,
            lookahead: lookahead.clone(),
            lookahead_scorer: la.as_ref(),
            rank_scorer: rk.as_ref(),
        };
        f(&ctx)
    }
}

pub fn train_baseline(corpus: &Corpus, cfg: &TrainConfig) -> Result<LogLinearModel> {
    let init = LogLinearModel::zeros(&corpus.vocab);
    train(&init, &as_examples(&corpus.train), cfg)
}

pub fn default_composite(cfg: &CorpusConfig, rows: usize) -> Result<CompositeMetric> {
    synthetic_fit_data(cfg, rows, cfg.seed ^ 0xC0_4505)?.fit()
}

/// Output of decoding one split with one recipe.
#[derive(Debug, Clone)]
pub struct RecipeRun {
    pub recipe: Recipe,
    pub outputs: Vec<Hypothesis>,
    pub calls: Vec<u64>,
    pub seconds: Vec<f64>,
}

/// Decodes every pair with `recipe`, counting model calls per document.
pub fn decode_split(
    model: &LogLinearModel,
    pairs: &[Pair],
    recipe: &Recipe,
    ctx: &RecipeContext<'_>,
) -> Result<RecipeRun> {
    let per_doc: Vec<(Hypothesis, u64, f64)> = pairs
        .par_iter()
        .map(|(doc, _)| {
            let counted = CallCounter::new(model);
            let t0 = Instant::now();
            let h = run_recipe(&counted, doc, recipe, ctx)?;
            Ok((h, counted.calls(), t0.elapsed().as_secs_f64()))
        })
        .collect::<Result<_>>()?;
    let mut run = RecipeRun {
        recipe: *recipe,
        outputs: Vec::with_capacity(per_doc.len()),
        calls: Vec::with_capacity(per_doc.len()),
        seconds: Vec::with_capacity(per_doc.len()),
    };
    for (h, c, s) in per_doc {
        run.outputs.push(h);
        run.calls.push(c);
        run.seconds.push(s);
    }
    Ok(run)
}

/// Mean score per scorer plus mean ROUGE-L against the references.
pub fn summarize(
    run: &RecipeRun,
    pairs: &[Pair],
    scorers: &[Box<dyn Scorer>],
) -> (BTreeMap<String, f64>, f64) {
    let n = pairs.len().max(1) as f64;
    let means = scorers
        .iter()
        .map(|s| {
            let total: f64 = run
                .outputs
                .iter()
                .zip(pairs)
                .map(|(h, (d, _))| s.score(h.content(), &d.tokens))
                .sum();
            (s.name().to_string(), total / n)
        })
        .collect();
    let rouge = run
        .outputs
        .iter()
        .zip(pairs)
        .map(|(h, (_, r))| rouge_l_f1(h.content(), &r[..r.len() - 1]))
        .sum::<f64>()
        / n;
    (means, rouge)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolated quantile.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn experiment_columns(scorer_names: &[String]) -> Vec<String> {
    let mut cols = vec!["recipe".to_string(), "docs".to_string()];
    cols.extend(scorer_names.iter().cloned());
    cols.extend(
        ["rouge_l", "model_calls", "calls_per_summary", "sec_per_summary_median"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols
}

/// One report row per recipe over the configured split. Unknown recipes are
/// rejected before any decoding starts.
pub fn run_experiment(lab: &Lab) -> Result<Table> {
    let recipes = lab.config.parsed_recipes()?;
    let scorers = lab.scorers(&lab.config.scorers)?;
    let names: Vec<String> = scorers.iter().map(|s| s.name().to_string()).collect();
    let pairs = lab.docs()?;
    let mut table = Table::new("experiment", experiment_columns(&names));
    lab.with_context(&lab.config.lookahead, |ctx| {
        for recipe in &recipes {
            let run = decode_split(&lab.model, pairs, recipe, ctx)?;
            let (means, rouge) = summarize(&run, pairs, &scorers);
            let calls: u64 = run.calls.iter().sum();
            let mut row: Vec<Cell> = vec![recipe.to_string().into(), pairs.len().into()];
            row.extend(names.iter().map(|n| Cell::Float(means[n])));
            row.push(rouge.into());
            row.push(calls.into());
            row.push((calls as f64 / pairs.len().max(1) as f64).into());
            row.push(median(&run.seconds).into());
            table.push(row)?;
        }
        Ok(())
    })?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    BeamSize,
    TopP,
    LookaheadWeight,
    Alpha,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "beam_size" => SweepAxis::BeamSize,
            "top_p" => SweepAxis::TopP,
            "lookahead_weight" => SweepAxis::LookaheadWeight,
            "alpha" => SweepAxis::Alpha,
            other => return Err(Error::config(format!("unknown sweep axis {other:?}"))),
        })
    }
}

/// Long-format sweep: one row per (value, scorer). Lookahead-weight and
/// alpha sweeps use greedy-base lookahead; the alpha sweep mixes source
/// precision and novelty in the heuristic and always reports both.
pub fn sweep(lab: &Lab, axis: SweepAxis, values: &[f64]) -> Result<Table> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let mut names = lab.config.scorers.clone();
    if axis == SweepAxis::Alpha {
        for n in ["source_precision", "novelty"] {
            if !names.iter().any(|x| x == n) {
                names.push(n.to_string());
            }
        }
    }
    let scorers = lab.scorers(&names)?;
    let pairs = lab.docs()?;
    let mut table = Table::new(
        "sweep",
        ["axis", "value", "recipe", "scorer", "mean"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    let axis_name = serde_json::to_value(axis)?.as_str().unwrap_or_default().to_string();
    for &value in values {
        let mut la = lab.config.lookahead.clone();
        let recipe = match axis {
            SweepAxis::BeamSize => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::config(format!("beam size {value} is not a positive integer")));
                }
                Recipe::Beam {
                    width: value as usize,
                }
            }
            SweepAxis::TopP => {
                crate::decoders::NucleusConfig::new(value)?;
                Recipe::Nucleus { top_p: value }
            }
            SweepAxis::LookaheadWeight => {
                la.weight = value;
                Recipe::GreedyLookahead
            }
            SweepAxis::Alpha => {
                CombinedHeuristicConfig::new(value)?;
                la.scorer = format!("combined:{value}");
                Recipe::GreedyLookahead
            }
        };
        la.validate(lab.vocab().len())?;
        let run = lab.with_context(&la, |ctx| decode_split(&lab.model, pairs, &recipe, ctx))?;
        let (means, rouge) = summarize(&run, pairs, &scorers);
        for s in &scorers {
            table.push(vec![
                axis_name.clone().into(),
                value.into(),
                recipe.to_string().into(),
                s.name().into(),
                means[s.name()].into(),
            ])?;
        }
        table.push(vec![
            axis_name.clone().into(),
            value.into(),
            recipe.to_string().into(),
            "rouge_l".into(),
            rouge.into(),
        ])?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub recipe: String,
    pub repeats: usize,
    pub median_sec_per_summary: f64,
    pub iqr_sec_per_summary: f64,
    pub calls_per_summary: f64,
    pub calls: Vec<u64>,
}

/// Serial wall-clock timing over `repeats` passes, with exact model-call
/// counts.
pub fn timing(
    model: &LogLinearModel,
    pairs: &[Pair],
    recipe: &Recipe,
    ctx: &RecipeContext<'_>,
    repeats: usize,
) -> Result<TimingReport> {
    if repeats < 3 {
        return Err(Error::config("timing needs at least 3 repeats"));
    }
    if pairs.is_empty() {
        return Err(Error::usage("timing needs documents"));
    }
    let mut per_pass = Vec::with_capacity(repeats);
    let mut calls = Vec::new();
    for rep in 0..repeats {
        let t0 = Instant::now();
        let mut pass_calls = Vec::with_capacity(pairs.len());
        for (doc, _) in pairs {
            let counted = CallCounter::new(model);
            run_recipe(&counted, doc, recipe, ctx)?;
            pass_calls.push(counted.calls());
        }
        per_pass.push(t0.elapsed().as_secs_f64() / pairs.len() as f64);
        if rep == 0 {
            calls = pass_calls;
        }
    }
    let total: u64 = calls.iter().sum();
    Ok(TimingReport {
        recipe: recipe.to_string(),
        repeats,
        median_sec_per_summary: median(&per_pass),
        iqr_sec_per_summary: quantile(&per_pass, 0.75) - quantile(&per_pass, 0.25),
        calls_per_summary: total as f64 / pairs.len() as f64,
        calls,
    })
}

/// Grid search of the lookahead weight on the dev split. The objective is
/// the mean over the configured faithfulness scorers and ROUGE-L, so
/// `novelty` (an abstractiveness measure) is left out; ties keep the smaller
/// weight.
pub fn tune_lookahead_weight(lab: &Lab, recipe: &Recipe, grid: &[f64]) -> Result<(f64, Vec<(f64, f64)>)> {
    if grid.is_empty() {
        return Err(Error::config("weight grid is empty"));
    }
    let names: Vec<String> = lab
        .config
        .scorers
        .iter()
        .filter(|n| n.as_str() != "novelty")
        .cloned()
        .collect();
    let scorers = lab.scorers(&names)?;
    let mut results = Vec::with_capacity(grid.len());
    for &w in grid {
        let la = LookaheadConfig {
            weight: w,
            ..lab.config.lookahead.clone()
        };
        let run = lab.with_context(&la, |ctx| decode_split(&lab.model, &lab.corpus.dev, recipe, ctx))?;
        let (means, rouge) = summarize(&run, &lab.corpus.dev, &scorers);
        let objective = (means.values().sum::<f64>() + rouge) / (means.len() + 1) as f64;
        results.push((w, objective));
    }
    let best = results
        .iter()
        .fold(results[0], |best, &r| if r.1 > best.1 { r } else { best });
    Ok((best.0, results))
}

/// The weight grid 5, 10, ..., 55.
pub fn weight_grid() -> Vec<f64> {
    (1..=11).map(|i| 5.0 * i as f64).collect()
}
