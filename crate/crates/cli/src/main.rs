//! `threadscope`: mine a forum dump for relevant threads and classify them.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Run;
use crate::config::{parse_override, PipelineConfig, OUTPUT_DIR_ENV};

/// A failure with a stable machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub msg: String,
}

impl Failure {
    pub fn new(kind: &'static str, msg: impl Into<String>) -> Self {
        Self {
            kind,
            msg: msg.into(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Failure {}

#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Pipeline config (flat TOML).
    #[arg(short, long, global = true, default_value = "threadscope.toml")]
    config: PathBuf,
    /// Override any config key, e.g. `--set t_sim=0.9`. Repeatable; beats
    /// the config file and the environment.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Same as `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Same as `--set output_dir=DIR`.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    /// Same as `--set t_sim=X`.
    #[arg(long, global = true)]
    t_sim: Option<f64>,
    /// Same as `--set folds=K`.
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics: stats.json, ccdf.csv.
    Stats,
    /// Train skip-gram embeddings: embedding.bin, embedding.txt, embedding_log.csv.
    TrainEmbed,
    /// Keyword seeds plus similarity expansion: selection.csv,
    /// selection_audit.csv, identify_summary.json.
    Identify,
    /// Train the per-class forest ensemble on the labels: model.bin.
    Train,
    /// Classify threads with the trained model: predictions.csv.
    Predict,
    /// Stratified k-fold evaluation: eval_report.json, eval_report.txt, folds.csv.
    Evaluate,
    /// Write a synthetic sample project (corpus, labels, keywords, config).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        threads: usize,
        #[arg(long = "synth-seed", default_value_t = 7)]
        synth_seed: u64,
    },
}

impl Cli {
    fn overrides(&self) -> anyhow::Result<Vec<(String, toml::Value)>> {
        let mut out = Vec::new();
        if let Some(s) = self.seed {
            out.push(("seed".into(), toml::Value::Integer(s as i64)));
        }
        if let Some(d) = &self.output_dir {
            out.push((
                "output_dir".into(),
                toml::Value::String(d.to_string_lossy().into_owned()),
            ));
        }
        if let Some(t) = self.t_sim {
            out.push(("t_sim".into(), toml::Value::Float(t)));
        }
        if let Some(k) = self.folds {
            out.push(("folds".into(), toml::Value::Integer(k as i64)));
        }
        // Generic overrides come last so they win over the sugar flags.
        for s in &self.sets {
            out.push(parse_override(s)?);
        }
        Ok(out)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Synth {
        out,
        threads,
        synth_seed,
    } = &cli.command
    {
        for p in commands::synth(out, *threads, *synth_seed)? {
            println!("{}", p.display());
        }
        return Ok(());
    }
    let env_dir = std::env::var(OUTPUT_DIR_ENV).ok();
    let cfg = PipelineConfig::load(&cli.config, &cli.overrides()?, env_dir.as_deref())?;
    let mut r = Run::start(cfg)?;
    match cli.command {
        Command::Stats => commands::stats(&mut r)?,
        Command::TrainEmbed => commands::train_embed(&mut r)?,
        Command::Identify => commands::identify(&mut r)?,
        Command::Train => commands::train(&mut r)?,
        Command::Predict => commands::predict(&mut r)?,
        Command::Evaluate => commands::evaluate(&mut r)?,
        Command::Synth { .. } => unreachable!("handled above"),
    }
    for p in r.finish()? {
        println!("{}", p.display());
    }
    Ok(())
}

fn kind_of(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
        if let Some(e) = cause.downcast_ref::<threadscope::Error>() {
            return e.kind();
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace(['\n', '\r'], " ");
            let quoted = serde_json::to_string(&msg).unwrap_or_else(|_| format!("{msg:?}"));
            eprintln!("error: kind={} msg={quoted}", kind_of(&e));
            ExitCode::FAILURE
        }
    }
}
