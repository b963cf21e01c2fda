use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use threadscope::classify::{evaluate_ensemble, train_ensemble, EnsembleModel, Example};
use threadscope::corpus::{corpus_stats, load_corpus, load_labels, ForumCorpus, LabelSet};
use threadscope::embedding::{train_skipgram_with_stats, EmbeddingMatrix};
use threadscope::identify::{identify_threads, KeywordSet};
use threadscope::metrics::agreement_report;
use threadscope::preprocess::{build_vocabulary, preprocess_corpus, Stopwords, TokenizedDoc};
use threadscope::synth::{synthetic_forum, SynthConfig, KEYWORD_FILLERS};
use threadscope::threadspace::project_thread;

use crate::config::PipelineConfig;
use crate::output::{self, DirLock, Header, Staging};
use crate::Failure;

/// Everything a pipeline subcommand needs: the effective config, the locked
/// output directory and the staging area for its files.
pub struct Run {
    pub cfg: PipelineConfig,
    stage: Staging,
    _lock: DirLock,
}

impl Run {
    pub fn start(cfg: PipelineConfig) -> anyhow::Result<Self> {
        let lock = DirLock::acquire(&cfg.output_dir)?;
        let header = Header::new(cfg.hash(), cfg.seed);
        Ok(Self {
            stage: Staging::new(&cfg.output_dir, header),
            cfg,
            _lock: lock,
        })
    }

    pub fn finish(self) -> anyhow::Result<Vec<PathBuf>> {
        let Run { stage, _lock, .. } = self;
        stage.commit()
    }
}

fn dependency(msg: impl Into<String>) -> anyhow::Error {
    Failure::new("dependency", msg).into()
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> anyhow::Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Failure::new("config", format!("`{key}` is not set")).into())
}

fn stopwords(cfg: &PipelineConfig) -> anyhow::Result<Stopwords> {
    Ok(match &cfg.stopwords {
        Some(p) => Stopwords::load(p)?,
        None => Stopwords::bundled().clone(),
    })
}

fn corpus(cfg: &PipelineConfig) -> anyhow::Result<ForumCorpus> {
    Ok(load_corpus(required(&cfg.corpus, "corpus")?)?)
}

fn documents(cfg: &PipelineConfig, corpus: &ForumCorpus) -> anyhow::Result<Vec<TokenizedDoc>> {
    Ok(preprocess_corpus(corpus, &stopwords(cfg)?))
}

fn embedding(cfg: &PipelineConfig, needed_by: &str) -> anyhow::Result<EmbeddingMatrix> {
    let path = cfg.embedding_path();
    if !path.exists() {
        return Err(dependency(format!(
            "{needed_by} needs an embedding but {} does not exist; run train-embed first or set `embedding`",
            path.display()
        )));
    }
    let is_text = path.extension().is_some_and(|e| e == "txt" || e == "vec");
    Ok(if is_text {
        EmbeddingMatrix::load_text(&path)?
    } else {
        EmbeddingMatrix::load_binary(&path)?
    })
}

fn keyword_sets(cfg: &PipelineConfig) -> anyhow::Result<Vec<KeywordSet>> {
    let sw = stopwords(cfg)?;
    let mut sets = Vec::with_capacity(cfg.keyword_sets.len());
    for (i, path) in cfg.keyword_sets.iter().enumerate() {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("set{}", i + 1));
        let set = KeywordSet::load(path, name, cfg.threshold(i))?;
        let dead = set.unmatchable(&sw);
        if !dead.is_empty() {
            warn(format_args!(
                "keyword set `{}`: {} can never match after preprocessing",
                set.name,
                dead.join(", ")
            ));
        }
        sets.push(set);
    }
    Ok(sets)
}

fn labels(cfg: &PipelineConfig, corpus: &ForumCorpus) -> anyhow::Result<LabelSet> {
    cfg.class_specs()?;
    Ok(load_labels(
        required(&cfg.labels, "labels")?,
        corpus,
        &cfg.classes,
    )?)
}

#[derive(Serialize)]
struct ExampleSummary {
    examples: usize,
    per_class: Vec<(String, usize)>,
    /// Labeled threads without any in-vocabulary token.
    excluded_unprojectable: Vec<String>,
}

/// Labeled, projectable threads in thread-id order.
fn examples<'a>(
    corpus: &'a ForumCorpus,
    docs: &'a [TokenizedDoc],
    labels: &LabelSet,
    emb: &EmbeddingMatrix,
) -> anyhow::Result<(Vec<Example<'a>>, ExampleSummary)> {
    let mut out = Vec::new();
    let mut excluded = Vec::new();
    let mut counts = vec![0usize; labels.classes.len()];
    for (id, class) in &labels.labels {
        let pos = corpus
            .position(id)
            .ok_or_else(|| threadscope::Error::UnknownThread(id.clone()))?;
        let doc = &docs[pos];
        match project_thread(doc, emb) {
            Ok(_) => {}
            Err(threadscope::Error::Unprojectable(_)) => {
                excluded.push(id.clone());
                continue;
            }
            Err(e) => return Err(e.into()),
        }
        let c = labels
            .class_index(class)
            .ok_or_else(|| threadscope::Error::UnknownClass(class.clone()))?;
        counts[c] += 1;
        out.push(Example {
            thread: &corpus.threads()[pos],
            doc,
            class: c,
        });
    }
    if !excluded.is_empty() {
        warn(format_args!(
            "{} labeled thread(s) have no in-vocabulary tokens and are excluded",
            excluded.len()
        ));
    }
    let summary = ExampleSummary {
        examples: out.len(),
        per_class: labels.classes.iter().cloned().zip(counts).collect(),
        excluded_unprojectable: excluded,
    };
    Ok((out, summary))
}

pub fn stats(run: &mut Run) -> anyhow::Result<()> {
    let corpus = corpus(&run.cfg)?;
    let report = corpus_stats(&corpus);
    run.stage.write_json("stats.json", "stats", &report)?;
    run.stage.write_text("ccdf.csv", |w| {
        writeln!(w, "posts,ccdf")?;
        for (k, p) in &report.ccdf {
            writeln!(w, "{k},{p}")?;
        }
        Ok(())
    })
}

pub fn train_embed(run: &mut Run) -> anyhow::Result<()> {
    let cfg = &run.cfg;
    let corpus = corpus(cfg)?;
    let docs = documents(cfg, &corpus)?;
    let vocab = build_vocabulary(&docs, cfg.min_count);
    if vocab.is_empty() {
        return Err(Failure::new(
            "invalid_argument",
            format!("no token occurs at least min_count={} times", cfg.min_count),
        )
        .into());
    }
    let (emb, stats) = train_skipgram_with_stats(&docs, &vocab, &cfg.train_params())?;
    run.stage.write_raw(output::EMBEDDING_BIN, |w| {
        emb.write_binary(w)?;
        Ok(())
    })?;
    // Plain `d m` interchange text; no header line so other tools can read it.
    run.stage.write_raw(output::EMBEDDING_TXT, |w| {
        emb.write_text(w)?;
        Ok(())
    })?;
    run.stage.write_text("embedding_log.csv", |w| {
        writeln!(w, "epoch,mean_loss,pairs")?;
        for (i, (l, p)) in stats
            .epoch_loss
            .iter()
            .zip(&stats.pairs_per_epoch)
            .enumerate()
        {
            writeln!(w, "{},{l},{p}", i + 1)?;
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct IdentifyReport {
    #[serde(flatten)]
    summary: threadscope::identify::SelectionSummary,
    t_sim: f64,
    keyword_sets: Vec<(String, usize)>,
    unprojectable_threads: BTreeSet<String>,
}

pub fn identify(run: &mut Run) -> anyhow::Result<()> {
    let cfg = &run.cfg;
    let emb = embedding(cfg, "identify")?;
    if cfg.keyword_sets.is_empty() {
        return Err(Failure::new("config", "`keyword_sets` is empty").into());
    }
    let sets = keyword_sets(cfg)?;
    let corpus = corpus(cfg)?;
    let docs = documents(cfg, &corpus)?;
    let result = identify_threads(&docs, &emb, &sets, cfg.t_sim)?;
    let report = IdentifyReport {
        summary: result.summary(),
        t_sim: cfg.t_sim,
        keyword_sets: sets.iter().map(|s| (s.name.clone(), s.threshold)).collect(),
        unprojectable_threads: result.unprojectable.clone(),
    };
    run.stage
        .write_text(output::SELECTION_CSV, |w| result.write_csv(w))?;
    run.stage
        .write_text("selection_audit.csv", |w| result.write_audit_csv(w))?;
    run.stage
        .write_json("identify_summary.json", "summary", &report)
}

#[derive(Serialize)]
struct TrainReport {
    #[serde(flatten)]
    examples: ExampleSummary,
    feature_len: usize,
    trees_per_forest: usize,
}

pub fn train(run: &mut Run) -> anyhow::Result<()> {
    let cfg = &run.cfg;
    let emb = embedding(cfg, "train")?;
    let specs = cfg.class_specs()?;
    let sets = keyword_sets(cfg)?;
    let corpus = corpus(cfg)?;
    let docs = documents(cfg, &corpus)?;
    let labels = labels(cfg, &corpus)?;
    let (ex, summary) = examples(&corpus, &docs, &labels, &emb)?;
    let model = train_ensemble(&ex, &specs, &emb, &sets, &cfg.ensemble_params())?;
    let report = TrainReport {
        examples: summary,
        feature_len: model.feature_len(),
        trees_per_forest: cfg.n_trees,
    };
    run.stage.write_raw(output::MODEL_BIN, |w| {
        model.write(w)?;
        Ok(())
    })?;
    run.stage.write_json("train_summary.json", "train", &report)
}

fn selected_ids(path: &Path) -> anyhow::Result<BTreeSet<String>> {
    if !path.exists() {
        return Err(dependency(format!(
            "predict_scope = \"selected\" needs {}; run identify first or set predict_scope = \"all\"",
            path.display()
        )));
    }
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter_map(|l| l.rsplitn(3, ',').nth(2))
        .map(str::to_string)
        .collect())
}

#[derive(Serialize)]
struct PredictReport {
    scope: String,
    predicted: usize,
    per_class: Vec<(String, usize)>,
    skipped_unprojectable: Vec<String>,
}

pub fn predict(run: &mut Run) -> anyhow::Result<()> {
    let cfg = &run.cfg;
    let model_path = cfg.model_path();
    if !model_path.exists() {
        return Err(dependency(format!(
            "predict needs {}; run train first",
            model_path.display()
        )));
    }
    let emb = embedding(cfg, "predict")?;
    let model = EnsembleModel::load(&model_path)?;
    model.check_embedding(&emb)?;
    let corpus = corpus(cfg)?;
    let docs = documents(cfg, &corpus)?;
    let scope: Option<BTreeSet<String>> = match cfg.predict_scope.as_str() {
        "all" => None,
        _ => Some(selected_ids(&cfg.output_dir.join(output::SELECTION_CSV))?),
    };

    let classes: Vec<String> = model.class_names().map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut counts = vec![0usize; classes.len()];
    for (thread, doc) in corpus.threads().iter().zip(&docs) {
        if scope
            .as_ref()
            .is_some_and(|s| !s.contains(&thread.thread_id))
        {
            continue;
        }
        match model.predict(&emb, thread, doc) {
            Ok(p) => {
                counts[p.class] += 1;
                rows.push((thread.thread_id.as_str(), p));
            }
            Err(threadscope::Error::Unprojectable(_)) => skipped.push(thread.thread_id.clone()),
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(s) = &scope {
        if let Some(id) = s.iter().find(|id| !corpus.contains(id)) {
            return Err(threadscope::Error::UnknownThread(id.clone()).into());
        }
    }
    run.stage.write_text("predictions.csv", |w| {
        write!(w, "thread_id,predicted_class")?;
        for c in &classes {
            write!(w, ",vote_{c}")?;
        }
        writeln!(w)?;
        for (id, p) in &rows {
            write!(w, "{id},{}", classes[p.class])?;
            for v in p.vote_counts() {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let report = PredictReport {
        scope: cfg.predict_scope.clone(),
        predicted: rows.len(),
        per_class: classes.into_iter().zip(counts).collect(),
        skipped_unprojectable: skipped,
    };
    run.stage
        .write_json("predict_summary.json", "predict", &report)
}

#[derive(Serialize)]
struct EvaluateReport {
    #[serde(flatten)]
    eval: threadscope::metrics::EvalReport,
    examples: ExampleSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    agreement: Option<threadscope::metrics::AgreementReport>,
}

pub fn evaluate(run: &mut Run) -> anyhow::Result<()> {
    let cfg = &run.cfg;
    let emb = embedding(cfg, "evaluate")?;
    let specs = cfg.class_specs()?;
    let sets = keyword_sets(cfg)?;
    let corpus = corpus(cfg)?;
    let docs = documents(cfg, &corpus)?;
    let mut labels = labels(cfg, &corpus)?;
    let (ex, summary) = examples(&corpus, &docs, &labels, &emb)?;
    let eval = evaluate_ensemble(
        &ex,
        &specs,
        &emb,
        &sets,
        &cfg.ensemble_params(),
        cfg.folds,
        cfg.seed,
    )?;
    for w in &eval.warnings {
        warn(w);
    }
    let agreement = match &cfg.annotations {
        Some(p) => {
            labels.load_annotations(p, &corpus)?;
            Some(agreement_report(&labels)?)
        }
        None => None,
    };

    let mut table = eval.to_table();
    if let Some(a) = &agreement {
        use std::fmt::Write as _;
        let _ = writeln!(
            table,
            "\nFleiss kappa {:.4} over {} threads, {} annotators each",
            a.overall, a.subjects, a.raters_per_subject
        );
        for (c, k) in &a.per_class {
            let _ = writeln!(table, "  {c:<16} {k:.4}");
        }
    }
    run.stage.write_text("folds.csv", |w| {
        writeln!(w, "fold,samples,accuracy,weighted_f1")?;
        for f in &eval.folds {
            writeln!(
                w,
                "{},{},{},{}",
                f.fold, f.samples, f.accuracy, f.weighted_f1
            )?;
        }
        Ok(())
    })?;
    run.stage
        .write_text("eval_report.txt", |w| w.write_all(table.as_bytes()))?;
    let report = EvaluateReport {
        eval,
        examples: summary,
        agreement,
    };
    run.stage
        .write_json("eval_report.json", "evaluation", &report)
}

/// Write a self-contained sample project (corpus, labels, annotations,
/// keyword sets and a config) into `dir`.
pub fn synth(dir: &Path, threads: usize, seed: u64) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::new("io", format!("cannot create {}: {e}", dir.display())))?;
    let forum = synthetic_forum(&SynthConfig {
        threads,
        seed,
        ..SynthConfig::default()
    });
    let header = Header::new("synthetic".into(), seed);
    let mut stage = Staging::new(dir, header);
    stage.write_raw("forum.jsonl", |w| {
        forum.corpus.write_jsonl(w)?;
        Ok(())
    })?;
    // Inputs are read back by the pipeline, so they carry no header line.
    stage.write_raw("labels.csv", |w| {
        writeln!(w, "thread_id,label")?;
        for (id, c) in forum.labels() {
            writeln!(w, "{id},{c}")?;
        }
        Ok(())
    })?;
    stage.write_raw("annotations.csv", |w| {
        writeln!(w, "thread_id,annotator_id,label")?;
        for (id, a, c) in forum.annotations(3, 0.15, seed) {
            writeln!(w, "{id},{a},{c}")?;
        }
        Ok(())
    })?;
    for word in KEYWORD_FILLERS {
        stage.write_raw(&format!("keywords_{word}.txt"), |w| {
            writeln!(w, "# one preprocessed keyword per line")?;
            writeln!(w, "{word}")?;
            Ok(())
        })?;
    }
    let class_words: Vec<String> = forum.specs.iter().map(|s| s.words.join(" ")).collect();
    let classes: Vec<&str> = forum.specs.iter().map(|s| s.name.as_str()).collect();
    let keyword_files: Vec<String> = KEYWORD_FILLERS
        .iter()
        .map(|w| format!("keywords_{w}.txt"))
        .collect();
    stage.write_raw("config.toml", |w| {
        writeln!(w, "# Sample threadscope pipeline over a synthetic forum.")?;
        writeln!(w, "corpus = \"forum.jsonl\"")?;
        writeln!(w, "labels = \"labels.csv\"")?;
        writeln!(w, "annotations = \"annotations.csv\"")?;
        writeln!(w, "output_dir = \"out\"")?;
        writeln!(w, "seed = {seed}")?;
        writeln!(w)?;
        writeln!(w, "keyword_sets = {}", toml_list(&keyword_files))?;
        writeln!(
            w,
            "keyword_thresholds = {}",
            toml_list(&vec!["1"; keyword_files.len()])
        )?;
        writeln!(w, "t_sim = 0.96")?;
        writeln!(w)?;
        writeln!(w, "classes = {}", toml_list(&classes))?;
        writeln!(w, "class_words = {}", toml_list(&class_words))?;
        writeln!(w)?;
        writeln!(w, "dims = 100")?;
        writeln!(w, "window = 10")?;
        writeln!(w, "epochs = 5")?;
        writeln!(w, "min_count = 5")?;
        writeln!(w, "n_trees = 100")?;
        writeln!(w, "boost = 2.0")?;
        writeln!(w, "folds = 10")?;
        Ok(())
    })?;
    stage.commit()
}

fn toml_list<S: AsRef<str>>(items: &[S]) -> String {
    let quoted: Vec<String> = items
        .iter()
        .map(|s| {
            let s = s.as_ref();
            if s.parse::<i64>().is_ok() {
                s.to_string()
            } else {
                toml::Value::String(s.to_string()).to_string()
            }
        })
        .collect();
    format!("[{}]", quoted.join(", "))
}
