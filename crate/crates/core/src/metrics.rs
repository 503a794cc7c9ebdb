//! Reference-free proxy scorers, ROUGE-L, and the least-squares composite.
//!
//! The proxies stand in for neural faithfulness metrics and keep their
//! orientation: every [`Scorer`] here is higher-is-better. Error-rate style
//! metrics are reported as `1 - error`.
//!
//! Summaries are passed without their terminating EOS (see
//! [`Hypothesis::content`](crate::domain::Hypothesis::content)).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::TokenId;
use crate::error::{Error, Result};

pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, summary: &[TokenId], source: &[TokenId]) -> f64;
    fn higher_is_better(&self) -> bool {
        true
    }
}

fn token_set(tokens: &[TokenId]) -> HashSet<TokenId> {
    tokens.iter().copied().collect()
}

fn ngram_set(tokens: &[TokenId], n: usize) -> HashSet<&[TokenId]> {
    if tokens.len() < n {
        return HashSet::new();
    }
    tokens.windows(n).collect()
}

/// Fraction of summary tokens that occur in the source. Empty summary: 0.
pub fn source_precision(summary: &[TokenId], source: &[TokenId]) -> f64 {
    if summary.is_empty() {
        return 0.0;
    }
    let src = token_set(source);
    summary.iter().filter(|t| src.contains(t)).count() as f64 / summary.len() as f64
}

/// Mean over n in {1,2,3} of the fraction of summary n-grams absent from the
/// source; levels with no summary n-grams are skipped. Empty summary: 1.
pub fn novelty(summary: &[TokenId], source: &[TokenId]) -> f64 {
    let mut total = 0.0;
    let mut levels = 0;
    for n in 1..=3 {
        if summary.len() < n {
            continue;
        }
        let src = ngram_set(source, n);
        let grams: Vec<&[TokenId]> = summary.windows(n).collect();
        let novel = grams.iter().filter(|g| !src.contains(*g)).count();
        total += novel as f64 / grams.len() as f64;
        levels += 1;
    }
    if levels == 0 {
        1.0
    } else {
        total / levels as f64
    }
}

/// Fraction of summary bigrams that occur contiguously in the source; a
/// single-token summary falls back to unigram support.
pub fn bigram_support(summary: &[TokenId], source: &[TokenId]) -> f64 {
    if summary.len() < 2 {
        return source_precision(summary, source);
    }
    let src = ngram_set(source, 2);
    let n = summary.len() - 1;
    summary.windows(2).filter(|g| src.contains(g)).count() as f64 / n as f64
}

/// `1 - error rate`, where an adjacent token pair is an error if either end
/// is unsupported by the source. A single token is its own arc.
pub fn arc_correctness(summary: &[TokenId], source: &[TokenId]) -> f64 {
    if summary.is_empty() {
        return 0.0;
    }
    if summary.len() == 1 {
        return source_precision(summary, source);
    }
    let src = token_set(source);
    let bad = summary
        .windows(2)
        .filter(|w| !src.contains(&w[0]) || !src.contains(&w[1]))
        .count();
    1.0 - bad as f64 / (summary.len() - 1) as f64
}

/// F1 of token precision against the source and coverage of distinct source
/// tokens.
pub fn coverage_f1(summary: &[TokenId], source: &[TokenId]) -> f64 {
    let p = source_precision(summary, source);
    let src = token_set(source);
    if src.is_empty() {
        return 0.0;
    }
    let covered = token_set(summary).intersection(&src).count();
    let r = covered as f64 / src.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Longest common subsequence length, O(|a|·|b|) time and O(|b|) memory.
pub fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 between a candidate and a reference.
pub fn rouge_l_f1(candidate: &[TokenId], reference: &[TokenId]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(candidate, reference) as f64;
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

macro_rules! fn_scorer {
    ($ty:ident, $name:literal, $f:path) => {
        #[derive(Debug, Clone, Copy, Default)]
        pub struct $ty;

        impl Scorer for $ty {
            fn name(&self) -> &str {
                $name
            }
            fn score(&self, summary: &[TokenId], source: &[TokenId]) -> f64 {
                $f(summary, source)
            }
        }
    };
}

fn_scorer!(SourcePrecision, "source_precision", source_precision);
fn_scorer!(Novelty, "novelty", novelty);
fn_scorer!(BigramSupport, "bigram_support", bigram_support);
fn_scorer!(ArcCorrectness, "arc_correctness", arc_correctness);
fn_scorer!(CoverageF1, "coverage_f1", coverage_f1);

/// Feature scorers consumed by the default composite, in fitting order.
pub const COMPOSITE_FEATURES: [&str; 4] = [
    "bigram_support",
    "arc_correctness",
    "source_precision",
    "coverage_f1",
];

/// Faithfulness/abstractiveness mixture `alpha * precision + (1 - alpha) * novelty`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedHeuristicConfig {
    pub alpha: f64,
}

impl CombinedHeuristicConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        Ok(CombinedHeuristicConfig { alpha })
    }
}

pub fn combined_heuristic(
    summary: &[TokenId],
    source: &[TokenId],
    cfg: &CombinedHeuristicConfig,
) -> f64 {
    cfg.alpha * source_precision(summary, source) + (1.0 - cfg.alpha) * novelty(summary, source)
}

#[derive(Debug, Clone)]
pub struct CombinedScorer {
    cfg: CombinedHeuristicConfig,
    name: String,
}

impl CombinedScorer {
    pub fn new(cfg: CombinedHeuristicConfig) -> Self {
        CombinedScorer {
            name: format!("combined_a{}", cfg.alpha),
            cfg,
        }
    }
}

impl Scorer for CombinedScorer {
    fn name(&self) -> &str {
        &self.name
    }
    fn score(&self, summary: &[TokenId], source: &[TokenId]) -> f64 {
        combined_heuristic(summary, source, &self.cfg)
    }
}

/// Linear combination of metric values plus an intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeMetric {
    pub weights: BTreeMap<String, f64>,
    pub intercept: f64,
}

impl CompositeMetric {
    pub fn score(&self, metric_values: &BTreeMap<String, f64>) -> Result<f64> {
        let missing: Vec<String> = self
            .weights
            .keys()
            .filter(|k| !metric_values.contains_key(*k))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingMetrics(missing));
        }
        Ok(self
            .weights
            .iter()
            .map(|(k, w)| w * metric_values[k])
            .sum::<f64>()
            + self.intercept)
    }

    pub fn scaled(&self, factor: f64) -> CompositeMetric {
        CompositeMetric {
            weights: self.weights.iter().map(|(k, w)| (k.clone(), w * factor)).collect(),
            intercept: self.intercept * factor,
        }
    }
}

pub fn composite_score(c: &CompositeMetric, metric_values: &BTreeMap<String, f64>) -> Result<f64> {
    c.score(metric_values)
}

/// Cholesky factorization of a symmetric matrix (row-major, n x n).
/// On failure returns the index of the first non-positive pivot.
fn cholesky(a: &[f64], n: usize, tol: f64) -> std::result::Result<Vec<f64>, usize> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > tol) {
            return Err(j);
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Diagonal ridge added when the normal equations are near-singular.
pub const RIDGE: f64 = 1e-8;

/// Ordinary least squares with intercept on raw features via the normal
/// equations. A near-singular Gram matrix is retried with [`RIDGE`] added to
/// the diagonal; if a pivot is still no larger than the ridge itself the
/// offending column is reported.
pub fn fit_composite(
    names: &[String],
    features: &[Vec<f64>],
    labels: &[f64],
) -> Result<CompositeMetric> {
    let m = names.len();
    let n_rows = features.len();
    if labels.len() != n_rows {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            n_rows,
            labels.len()
        )));
    }
    if n_rows <= m {
        return Err(Error::usage(format!(
            "need more rows than features, got {n_rows} rows for {m} features"
        )));
    }
    if let Some(row) = features.iter().find(|r| r.len() != m) {
        return Err(Error::Shape(format!(
            "feature row has {} values, expected {m}",
            row.len()
        )));
    }
    // design column 0 is the intercept
    let p = m + 1;
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    let mut x = vec![0.0; p];
    for (row, &y) in features.iter().zip(labels) {
        x[0] = 1.0;
        x[1..].copy_from_slice(row);
        for i in 0..p {
            rhs[i] += x[i] * y;
            for j in 0..=i {
                gram[i * p + j] += x[i] * x[j];
            }
        }
    }
    for i in 0..p {
        for j in i + 1..p {
            gram[i * p + j] = gram[j * p + i];
        }
    }
    let max_diag = (0..p).map(|i| gram[i * p + i]).fold(0.0, f64::max);
    let factor = match cholesky(&gram, p, 1e-12 * max_diag) {
        Ok(l) => l,
        Err(_) => {
            let mut ridged = gram.clone();
            for i in 0..p {
                ridged[i * p + i] += RIDGE;
            }
            cholesky(&ridged, p, 10.0 * RIDGE).map_err(|col| Error::RankDeficient {
                column: if col == 0 {
                    "intercept".to_string()
                } else {
                    names[col - 1].clone()
                },
            })?
        }
    };
    let beta = cholesky_solve(&factor, p, &rhs);
    Ok(CompositeMetric {
        weights: names.iter().cloned().zip(beta[1..].iter().copied()).collect(),
        intercept: beta[0],
    })
}

/// Fitting data parsed from CSV: metric-name header plus a final `label`
/// column.
#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    pub names: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl FitData {
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let cols: Vec<String> = header.iter().map(str::to_string).collect();
        if cols.last().map(String::as_str) != Some("label") || cols.len() < 2 {
            return Err(Error::config(
                "fitting CSV needs metric columns followed by a final \"label\" column",
            ));
        }
        let names = cols[..cols.len() - 1].to_vec();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::config(format!("row {}: cannot parse {s:?} as a number", line + 2))
                    })
                })
                .collect::<Result<_>>()?;
            labels.push(vals[vals.len() - 1]);
            features.push(vals[..vals.len() - 1].to_vec());
        }
        Ok(FitData {
            names,
            features,
            labels,
        })
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        FitData::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.names.clone();
        header.push("label".into());
        w.write_record(&header)?;
        for (row, y) in self.features.iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(y.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn fit(&self) -> Result<CompositeMetric> {
        fit_composite(&self.names, &self.features, &self.labels)
    }
}

/// Scores a summary with a set of feature scorers and combines them with a
/// [`CompositeMetric`].
pub struct CompositeScorer {
    metric: CompositeMetric,
    features: Vec<Box<dyn Scorer>>,
}

impl CompositeScorer {
    pub fn new(metric: CompositeMetric) -> Result<Self> {
        let features = metric
            .weights
            .keys()
            .map(|k| basic_scorer(k))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompositeScorer { metric, features })
    }

    pub fn metric(&self) -> &CompositeMetric {
        &self.metric
    }

    pub fn feature_values(&self, summary: &[TokenId], source: &[TokenId]) -> BTreeMap<String, f64> {
        self.features
            .iter()
            .map(|s| (s.name().to_string(), s.score(summary, source)))
            .collect()
    }
}

impl Scorer for CompositeScorer {
    fn name(&self) -> &str {
        "composite"
    }
    fn score(&self, summary: &[TokenId], source: &[TokenId]) -> f64 {
        self.metric
            .score(&self.feature_values(summary, source))
            .expect("composite features are built from its own weight names")
    }
}

/// Scorers that need no configuration, by name.
pub fn basic_scorer(name: &str) -> Result<Box<dyn Scorer>> {
    Ok(match name {
        "source_precision" => Box::new(SourcePrecision),
        "novelty" => Box::new(Novelty),
        "bigram_support" => Box::new(BigramSupport),
        "arc_correctness" => Box::new(ArcCorrectness),
        "coverage_f1" => Box::new(CoverageF1),
        other => return Err(Error::config(format!("unknown scorer {other:?}"))),
    })
}
