//! `faithdec`: command-line front end for the decoding lab.
//!
//! Every subcommand reads an optional JSON experiment config, applies flag
//! overrides and refuses to run without a seed. Exit status is 0 on
//! success, 2 for configuration or input errors and 3 when a run aborts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use faithdec::distill::{
    distill_train, generate_pseudo_labels, greedy_report, iterative_distill, write_pseudo_labels,
    DistillConfig,
};
use faithdec::guided::{lookahead_decode, rank_candidates_with, Base, LookaheadConfig};
use faithdec::harness::{
    default_composite, generate_corpus, run_experiment, save_corpus, summarize, sweep, timing,
    train_baseline, tune_lookahead_weight, weight_grid, Cell, ExperimentConfig, Lab, RecipeRun,
    SweepAxis, Table,
};
use faithdec::metrics::{FitData, Scorer};
use faithdec::models::{CallCounter, LogLinearModel};
use faithdec::recipe::Recipe;
use faithdec::{Error, TokenId, Vocabulary};

#[derive(Parser)]
#[command(name = "faithdec", version, about = "Faithfulness-aware decoding lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and write it as JSON Lines.
    GenCorpus {
        #[command(flatten)]
        common: Common,
    },
    /// Train the baseline model and write it as JSON.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Decode a split with one recipe; one JSON line per document.
    Decode {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "greedy")]
        recipe: String,
    },
    /// Beam-decode and re-rank candidates by a metric.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        width: usize,
    },
    /// Lookahead decoding, optionally writing per-step traces.
    Lookahead {
        #[command(flatten)]
        common: Common,
        /// Beam width of the base decoder; greedy when absent.
        #[arg(long)]
        width: Option<usize>,
        /// Write per-step JSON Lines traces here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Grid-search the weight on the dev split before decoding.
        #[arg(long)]
        tune: bool,
    },
    /// One round of decoding distillation.
    Distill {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        distill: DistillFlags,
    },
    /// Several rounds of distillation, each student teaching the next.
    Iterate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        distill: DistillFlags,
    },
    /// Fit the composite metric from a CSV, or from synthetic labels.
    FitComposite {
        #[command(flatten)]
        common: Common,
        /// CSV with metric columns and a final `label` column.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sweep one decoding parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// beam_size, top_p, lookahead_weight or alpha.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Time a recipe and count model calls.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "greedy")]
        recipe: String,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// One report row per configured recipe.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

/// Options shared by every subcommand. Flags override config fields.
#[derive(Args)]
struct Common {
    /// JSON experiment config; unset fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Load the corpus from a `gen-corpus` directory.
    #[arg(long)]
    corpus_dir: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    composite: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    /// Replaces the configured recipes; repeatable.
    #[arg(long = "recipes", value_delimiter = ',')]
    recipes: Vec<String>,
    /// Replaces the configured scorers; repeatable.
    #[arg(long = "scorers", value_delimiter = ',')]
    scorers: Vec<String>,
    #[arg(long)]
    rank_scorer: Option<String>,
    #[arg(long)]
    lookahead_scorer: Option<String>,
    #[arg(long)]
    weight: Option<f64>,
    #[arg(long)]
    candidate_cap: Option<usize>,
    #[arg(long)]
    max_length: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    train_docs: Option<usize>,
    #[arg(long)]
    dev_docs: Option<usize>,
    #[arg(long)]
    test_docs: Option<usize>,
    #[arg(long)]
    hallucination_rate: Option<f64>,
    #[arg(long)]
    composite_fit_rows: Option<usize>,
}

#[derive(Args)]
struct DistillFlags {
    /// Teacher recipe, e.g. `beam-lookahead-ranking:10`.
    #[arg(long)]
    teacher: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    label_fraction: Option<f64>,
}

/// Everything a config file may hold: experiment fields at the top level
/// and distillation settings under `distill`.
#[derive(Debug, Clone, Serialize)]
struct RunConfig {
    #[serde(flatten)]
    experiment: ExperimentConfig,
    distill: DistillConfig,
}

enum Failure {
    Config(String),
    Runtime(String),
    /// The reader of stdout went away, e.g. `| head`.
    Closed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(io) => return io.into(),
            Error::Json(j) if j.is_io() => return j.into(),
            _ => {}
        }
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return Failure::Closed;
        }
        Failure::Runtime(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        if e.io_error_kind() == Some(std::io::ErrorKind::BrokenPipe) {
            return Failure::Closed;
        }
        Failure::Runtime(format!("json error: {e}"))
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) | Err(Failure::Closed) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::GenCorpus { common } => gen_corpus(&common),
        Command::Train { common } => train_cmd(&common),
        Command::Decode { common, recipe } => decode_cmd(&common, &recipe),
        Command::Rank { common, width } => rank_cmd(&common, width),
        Command::Lookahead {
            common,
            width,
            trace,
            tune,
        } => lookahead_cmd(&common, width, trace.as_deref(), tune),
        Command::Distill { common, distill } => distill_cmd(&common, &distill),
        Command::Iterate { common, distill } => iterate_cmd(&common, &distill),
        Command::FitComposite { common, data } => fit_composite_cmd(&common, data.as_deref()),
        Command::Sweep {
            common,
            axis,
            values,
        } => sweep_cmd(&common, &axis, &values),
        Command::Profile {
            common,
            recipe,
            repeats,
        } => profile_cmd(&common, &recipe, repeats),
        Command::Report { common } => report_cmd(&common),
    }
}

fn load_config(common: &Common, flags: Option<&DistillFlags>) -> CliResult<RunConfig> {
    let mut raw = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
            let v: Value = serde_json::from_str(&text).map_err(|e| {
                config_error(format!("config {} is not valid JSON: {e}", path.display()))
            })?;
            if !v.is_object() {
                return Err(config_error("config must be a JSON object"));
            }
            v
        }
        None => json!({}),
    };
    let distill_raw = raw.as_object_mut().and_then(|o| o.remove("distill"));
    let mut experiment: ExperimentConfig =
        serde_json::from_value(raw).map_err(|e| config_error(format!("bad config: {e}")))?;
    let mut distill: DistillConfig = match distill_raw {
        Some(v) => serde_json::from_value(v)
            .map_err(|e| config_error(format!("bad distill config: {e}")))?,
        None => DistillConfig::default(),
    };

    let e = &mut experiment;
    if common.seed.is_some() {
        e.seed = common.seed;
    }
    if common.out.is_some() {
        e.output = common.out.clone();
    }
    if let Some(d) = &common.corpus_dir {
        e.corpus_dir = Some(d.clone());
    }
    if let Some(m) = &common.model {
        e.model = Some(m.clone());
    }
    if let Some(c) = &common.composite {
        e.composite = Some(c.clone());
    }
    if let Some(s) = &common.split {
        e.split = s.clone();
    }
    if !common.recipes.is_empty() {
        e.recipes = common.recipes.clone();
    }
    if !common.scorers.is_empty() {
        e.scorers = common.scorers.clone();
    }
    if let Some(s) = &common.rank_scorer {
        e.rank_scorer = s.clone();
    }
    if let Some(s) = &common.lookahead_scorer {
        e.lookahead.scorer = s.clone();
    }
    if let Some(w) = common.weight {
        e.lookahead.weight = w;
    }
    if let Some(c) = common.candidate_cap {
        e.lookahead.candidate_cap = c;
    }
    if let Some(n) = common.max_length {
        e.decode.max_length = n;
    }
    if let Some(n) = common.epochs {
        e.train.epochs = n;
    }
    if let Some(lr) = common.learning_rate {
        e.train.learning_rate = lr;
    }
    if let Some(n) = common.vocab_size {
        e.corpus.vocab_size = n;
    }
    if let Some(n) = common.train_docs {
        e.corpus.train_docs = n;
    }
    if let Some(n) = common.dev_docs {
        e.corpus.dev_docs = n;
    }
    if let Some(n) = common.test_docs {
        e.corpus.test_docs = n;
    }
    if let Some(r) = common.hallucination_rate {
        e.corpus.hallucination_rate = r;
    }
    if let Some(n) = common.composite_fit_rows {
        e.composite_fit_rows = n;
    }

    if let Some(f) = flags {
        if let Some(t) = &f.teacher {
            distill.teacher = t.parse()?;
        }
        if let Some(l) = f.lambda {
            distill.lambda = l;
        }
        if let Some(n) = f.iterations {
            distill.iterations = n;
        }
        if let Some(x) = f.label_fraction {
            distill.label_fraction = x;
        }
        distill.validate()?;
    }

    for (what, path) in [
        ("corpus directory", &experiment.corpus_dir),
        ("model", &experiment.model),
        ("composite", &experiment.composite),
    ] {
        if let Some(p) = path {
            if !p.exists() {
                return Err(config_error(format!(
                    "{what} {} does not exist",
                    p.display()
                )));
            }
        }
    }
    experiment.validate()?;
    Ok(RunConfig {
        experiment,
        distill,
    })
}

fn build_lab(common: &Common) -> CliResult<(Lab, RunConfig)> {
    let cfg = load_config(common, None)?;
    let lab = Lab::build(cfg.experiment.clone())?;
    Ok((lab, cfg))
}

/// Writes to `path`, or to stdout when absent.
fn with_output(
    path: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> CliResult<()>,
) -> CliResult<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            let mut w = BufWriter::new(File::create(p)?);
            f(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            f(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

/// Saves `<stem>.csv` and `<stem>.json` into the output directory, or
/// prints the CSV when no directory is given.
fn emit_table(table: &Table, out: Option<&Path>, stem: &str, config: &RunConfig) -> CliResult<()> {
    match out {
        Some(dir) => {
            table.save(dir, stem, config)?;
            eprintln!("wrote {}", dir.join(format!("{stem}.csv")).display());
        }
        None => {
            table.write_csv(std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn words(vocab: &Vocabulary, tokens: &[TokenId]) -> CliResult<Vec<String>> {
    Ok(tokens
        .iter()
        .filter(|&&t| t != vocab.eos_id())
        .map(|&t| vocab.token(t).map(str::to_string))
        .collect::<faithdec::Result<_>>()?)
}

fn gen_corpus(common: &Common) -> CliResult<()> {
    let cfg = load_config(common, None)?;
    let dir = common
        .out
        .as_deref()
        .ok_or_else(|| config_error("gen-corpus needs --out DIR"))?;
    let corpus = generate_corpus(&cfg.experiment.corpus)?;
    save_corpus(&corpus, dir)?;
    std::fs::write(
        dir.join("config.json"),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )?;
    eprintln!(
        "wrote {} train, {} dev, {} test pairs to {}",
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len(),
        dir.display()
    );
    Ok(())
}

fn train_cmd(common: &Common) -> CliResult<()> {
    let cfg = load_config(common, None)?;
    let e = &cfg.experiment;
    let corpus = match &e.corpus_dir {
        Some(d) => faithdec::harness::load_corpus(d)?,
        None => generate_corpus(&e.corpus)?,
    };
    let model = train_baseline(&corpus, &e.train)?;
    let json = model.to_json()?;
    with_output(common.out.as_deref(), |w| {
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn decode_cmd(common: &Common, recipe: &str) -> CliResult<()> {
    let recipe: Recipe = recipe.parse()?;
    let (lab, _) = build_lab(common)?;
    let pairs = lab.docs()?;
    let vocab = lab.vocab();
    let run = lab.with_context(&lab.config.lookahead, |ctx| {
        faithdec::harness::decode_split(&lab.model, pairs, &recipe, ctx)
    })?;
    with_output(common.out.as_deref(), |w| {
        for (((doc, _), h), calls) in pairs.iter().zip(&run.outputs).zip(&run.calls) {
            let line = json!({
                "id": doc.id,
                "recipe": recipe.to_string(),
                "summary": words(vocab, &h.tokens)?,
                "logprob": h.logprob,
                "model_calls": calls,
                "seed": lab.config.decode.seed,
            });
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn rank_cmd(common: &Common, width: usize) -> CliResult<()> {
    let (lab, _) = build_lab(common)?;
    let beam = faithdec::decoders::BeamConfig::new(width)?;
    let rank_scorer = lab.scorer(&lab.config.rank_scorer)?;
    let extras = lab.scorers(&lab.config.scorers)?;
    let extra_refs: Vec<&dyn Scorer> = extras.iter().map(|s| s.as_ref()).collect();
    let vocab = lab.vocab();
    with_output(common.out.as_deref(), |w| {
        for (doc, _) in lab.docs()? {
            let cands =
                faithdec::decoders::beam_decode(&lab.model, doc, &beam, &lab.config.decode)?;
            let ranked = rank_candidates_with(&cands, rank_scorer.as_ref(), &extra_refs, doc)?;
            let rows: Vec<Value> = ranked
                .iter()
                .map(|c| {
                    Ok(json!({
                        "summary": words(vocab, &c.hypothesis.tokens)?,
                        "logprob": c.hypothesis.logprob,
                        "rank_score": c.rank_score,
                        "source_rank": c.source_rank,
                        "metric_scores": c.metric_scores,
                    }))
                })
                .collect::<CliResult<_>>()?;
            let line = json!({
                "id": doc.id,
                "rank_scorer": rank_scorer.name(),
                "candidates": rows,
            });
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

fn lookahead_cmd(
    common: &Common,
    width: Option<usize>,
    trace: Option<&Path>,
    tune: bool,
) -> CliResult<()> {
    let (lab, _) = build_lab(common)?;
    let base = match width {
        Some(0) => return Err(config_error("beam width must be positive")),
        Some(k) => Base::Beam { width: k },
        None => Base::Greedy,
    };
    let mut la = LookaheadConfig {
        base,
        ..lab.config.lookahead.clone()
    };
    if tune {
        let recipe = match base {
            Base::Greedy => Recipe::GreedyLookahead,
            Base::Beam { width } => Recipe::BeamLookahead { width },
        };
        let (best, grid) = tune_lookahead_weight(&lab, &recipe, &weight_grid())?;
        for (w, obj) in &grid {
            eprintln!("weight {w}: dev objective {obj:.5}");
        }
        eprintln!("selected weight {best}");
        la.weight = best;
    }
    la.validate(lab.vocab().len())?;
    let scorer = lab.scorer(&la.scorer)?;
    let vocab = lab.vocab();
    let mut trace_out = match trace {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    with_output(common.out.as_deref(), |w| {
        for (doc, _) in lab.docs()? {
            let counted = CallCounter::new(&lab.model);
            let out = lookahead_decode(&counted, doc, &la, scorer.as_ref(), &lab.config.decode)?;
            let best = out.best();
            let line = json!({
                "id": doc.id,
                "weight": la.weight,
                "summary": words(vocab, &best.tokens)?,
                "logprob": best.logprob,
                "model_calls": counted.calls(),
            });
            serde_json::to_writer(&mut *w, &line)?;
            w.write_all(b"\n")?;
            if let Some(t) = trace_out.as_mut() {
                for step in &out.trace {
                    serde_json::to_writer(&mut *t, &json!({"id": doc.id, "trace": step}))?;
                    t.write_all(b"\n")?;
                }
            }
        }
        Ok(())
    })?;
    if let Some(mut t) = trace_out {
        t.flush()?;
    }
    Ok(())
}

fn distill_setup(
    common: &Common,
    flags: &DistillFlags,
) -> CliResult<(Lab, RunConfig, Vec<Box<dyn Scorer>>)> {
    let cfg = load_config(common, Some(flags))?;
    let lab = Lab::build(cfg.experiment.clone())?;
    let scorers = lab.scorers(&lab.config.scorers)?;
    Ok((lab, cfg, scorers))
}

fn distill_cmd(common: &Common, flags: &DistillFlags) -> CliResult<()> {
    let (lab, cfg, scorers) = distill_setup(common, flags)?;
    let dcfg = &cfg.distill;
    let train_pairs = &lab.corpus.train;
    let used = ((train_pairs.len() as f64 * dcfg.label_fraction).ceil() as usize)
        .clamp(1, train_pairs.len());
    let eval = lab.docs()?;
    let (student, labels) = lab.with_context(&lab.config.lookahead, |ctx| {
        let labels = generate_pseudo_labels(&lab.model, &dcfg.teacher, &train_pairs[..used], ctx)?;
        let fresh = LogLinearModel::random(lab.vocab(), dcfg.init_seed, 0.01);
        let student = distill_train(&fresh, &labels, dcfg)?;
        Ok((student, labels))
    })?;

    let names: Vec<String> = scorers.iter().map(|s| s.name().to_string()).collect();
    let mut columns = vec!["model".to_string(), "recipe".to_string()];
    columns.extend(names.iter().cloned());
    columns.extend(
        ["rouge_l", "calls_per_summary"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut table = Table::new("distill", columns);
    let runs = lab.with_context(&lab.config.lookahead, |ctx| {
        let base = faithdec::harness::decode_split(&lab.model, eval, &Recipe::Greedy, ctx)?;
        let teacher = faithdec::harness::decode_split(&lab.model, eval, &dcfg.teacher, ctx)?;
        let stud = faithdec::harness::decode_split(&student, eval, &Recipe::Greedy, ctx)?;
        Ok([("baseline", base), ("teacher", teacher), ("student", stud)])
    })?;
    for (name, run) in &runs {
        push_run_row(&mut table, name, run, eval, &scorers)?;
    }

    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("student.json"), student.to_json()? + "\n")?;
        let mut w = BufWriter::new(File::create(dir.join("pseudo_labels.jsonl"))?);
        write_pseudo_labels(&mut w, lab.vocab(), &labels)?;
        w.flush()?;
    }
    emit_table(&table, common.out.as_deref(), "distill", &cfg)
}

fn push_run_row(
    table: &mut Table,
    name: &str,
    run: &RecipeRun,
    pairs: &[faithdec::harness::Pair],
    scorers: &[Box<dyn Scorer>],
) -> CliResult<()> {
    let (means, rouge) = summarize(run, pairs, scorers);
    let calls: u64 = run.calls.iter().sum();
    let mut row: Vec<Cell> = vec![name.into(), run.recipe.to_string().into()];
    row.extend(scorers.iter().map(|s| Cell::Float(means[s.name()])));
    row.push(rouge.into());
    row.push((calls as f64 / pairs.len().max(1) as f64).into());
    table.push(row)?;
    Ok(())
}

fn iterate_cmd(common: &Common, flags: &DistillFlags) -> CliResult<()> {
    let (lab, cfg, scorers) = distill_setup(common, flags)?;
    let eval: Vec<_> = lab.docs()?.iter().map(|(d, _)| d.clone()).collect();
    let refs: Vec<&dyn Scorer> = scorers.iter().map(|s| s.as_ref()).collect();
    let rounds = lab.with_context(&lab.config.lookahead, |ctx| {
        let baseline = greedy_report(&lab.model, &eval, &refs, ctx)?;
        let rounds = iterative_distill(
            &cfg.distill,
            lab.vocab(),
            &lab.corpus.train,
            &lab.model,
            ctx,
            &eval,
            &refs,
        )?;
        Ok((baseline, rounds))
    })?;
    let (baseline, rounds) = rounds;

    let names: Vec<String> = scorers.iter().map(|s| s.name().to_string()).collect();
    let mut columns = vec!["round".to_string()];
    columns.extend(names.iter().cloned());
    let mut table = Table::new("iterate", columns);
    let row = |round: usize, report: &BTreeMap<String, f64>| -> Vec<Cell> {
        let mut r: Vec<Cell> = vec![round.into()];
        r.extend(names.iter().map(|n| Cell::Float(report[n])));
        r
    };
    table.push(row(0, &baseline))?;
    for r in &rounds {
        table.push(row(r.round, &r.report))?;
    }
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        for r in &rounds {
            std::fs::write(
                dir.join(format!("student_round{}.json", r.round)),
                r.student.to_json()? + "\n",
            )?;
        }
    }
    emit_table(&table, common.out.as_deref(), "iterate", &cfg)
}

fn fit_composite_cmd(common: &Common, data: Option<&Path>) -> CliResult<()> {
    let cfg = load_config(common, None)?;
    let metric = match data {
        Some(p) => {
            if !p.exists() {
                return Err(config_error(format!(
                    "fitting data {} does not exist",
                    p.display()
                )));
            }
            FitData::from_csv_path(p)?.fit()?
        }
        None => {
            let e = &cfg.experiment;
            default_composite(&e.corpus, e.composite_fit_rows)?
        }
    };
    let json = serde_json::to_string_pretty(&metric)?;
    with_output(common.out.as_deref(), |w| {
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn sweep_cmd(common: &Common, axis: &str, values: &[f64]) -> CliResult<()> {
    let axis: SweepAxis = axis.parse()?;
    let (lab, cfg) = build_lab(common)?;
    let table = sweep(&lab, axis, values)?;
    emit_table(&table, common.out.as_deref(), "sweep", &cfg)
}

fn profile_cmd(common: &Common, recipe: &str, repeats: usize) -> CliResult<()> {
    let recipe: Recipe = recipe.parse()?;
    let (lab, _) = build_lab(common)?;
    let pairs = lab.docs()?;
    let report = lab.with_context(&lab.config.lookahead, |ctx| {
        timing(&lab.model, pairs, &recipe, ctx, repeats)
    })?;
    let json = serde_json::to_string_pretty(&report)?;
    with_output(common.out.as_deref(), |w| {
        w.write_all(json.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn report_cmd(common: &Common) -> CliResult<()> {
    let (lab, cfg) = build_lab(common)?;
    let table = run_experiment(&lab)?;
    emit_table(&table, common.out.as_deref(), "experiment", &cfg)
}
