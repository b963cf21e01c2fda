//! Pipeline configuration: a flat TOML file plus command-line overrides.
//!
//! Precedence, highest first: `--set key=value` and the dedicated flags
//! (which are sugar for `--set`), then `THREADSCOPE_OUTPUT_DIR` (output
//! directory only), then the config file, then built-in defaults. Relative
//! paths in the config file resolve against the file's directory; relative
//! paths given on the command line or in the environment resolve against the
//! working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use threadscope::classify::forest::ForestParams;
use threadscope::classify::{ClassSpec, EnsembleParams};
use threadscope::embedding::TrainParams;

use crate::Failure;

pub const OUTPUT_DIR_ENV: &str = "THREADSCOPE_OUTPUT_DIR";

const PATH_KEYS: [&str; 6] = [
    "corpus",
    "stopwords",
    "labels",
    "annotations",
    "embedding",
    "output_dir",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub corpus: Option<PathBuf>,
    /// Bundled English list when unset.
    pub stopwords: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,

    pub keyword_sets: Vec<PathBuf>,
    /// One per keyword set; missing entries default to 1.
    pub keyword_thresholds: Vec<usize>,
    pub t_sim: f64,

    pub labels: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub classes: Vec<String>,
    /// Space-separated defining words, one entry per class.
    pub class_words: Vec<String>,

    /// Pre-trained embedding (`.txt` or binary); defaults to the output of
    /// `train-embed` in the output directory.
    pub embedding: Option<PathBuf>,
    pub dims: usize,
    pub window: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub min_count: u64,
    pub learning_rate: f64,
    pub subsample: f64,
    /// 1 is bit-reproducible; more workers train lock-free and are not.
    pub workers: usize,

    pub n_trees: usize,
    /// 0 means unlimited.
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub boost: f64,
    pub contextual: bool,
    pub folds: usize,
    /// `selected` (threads chosen by `identify`) or `all`.
    pub predict_scope: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let tp = TrainParams::default();
        let fp = ForestParams::default();
        let ep = EnsembleParams::default();
        Self {
            corpus: None,
            stopwords: None,
            output_dir: PathBuf::from("out"),
            seed: 1,
            keyword_sets: Vec::new(),
            keyword_thresholds: Vec::new(),
            t_sim: threadscope::identify::DEFAULT_T_SIM,
            labels: None,
            annotations: None,
            classes: Vec::new(),
            class_words: Vec::new(),
            embedding: None,
            dims: tp.dims,
            window: tp.window,
            epochs: tp.epochs,
            negatives: tp.negatives,
            min_count: 5,
            learning_rate: tp.learning_rate,
            subsample: tp.subsample,
            workers: tp.workers,
            n_trees: fp.n_trees,
            max_depth: 0,
            min_samples_leaf: fp.min_samples_leaf,
            boost: ep.boost,
            contextual: ep.contextual,
            folds: 10,
            predict_scope: "selected".into(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Failure::new("config", msg).into()
}

/// Parse a `key=value` override. The value is read as a TOML value when it
/// parses as one and as a bare string otherwise.
pub fn parse_override(s: &str) -> anyhow::Result<(String, toml::Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{s}` is not key=value")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(config_err(format!("override `{s}` has an empty key")));
    }
    let v = v.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn resolve(table: &mut toml::Table, base: &Path) {
    let join = |v: &mut toml::Value| {
        if let toml::Value::String(s) = v {
            let p = Path::new(s.as_str());
            if p.is_relative() {
                *s = base.join(p).to_string_lossy().into_owned();
            }
        }
    };
    for key in PATH_KEYS {
        if let Some(v) = table.get_mut(key) {
            join(v);
        }
    }
    if let Some(toml::Value::Array(items)) = table.get_mut("keyword_sets") {
        items.iter_mut().for_each(join);
    }
}

impl PipelineConfig {
    pub fn load(
        path: &Path,
        overrides: &[(String, toml::Value)],
        env_output_dir: Option<&str>,
    ) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Failure::new(
                "config",
                format!("cannot read config {}: {e}", path.display()),
            )
        })?;
        let mut table: toml::Table = toml::from_str(&text)
            .map_err(|e| config_err(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        // The default output directory sits next to the config, like any
        // other path the file could have named.
        table
            .entry("output_dir")
            .or_insert_with(|| toml::Value::String("out".into()));
        resolve(&mut table, base);

        if let Some(dir) = env_output_dir.filter(|d| !d.is_empty()) {
            table.insert("output_dir".into(), toml::Value::String(dir.into()));
        }
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        let cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.dims == 0 {
            return Err(config_err("dims must be ≥ 1"));
        }
        if self.t_sim.is_nan() || self.t_sim <= 0.0 || self.t_sim > 1.0 {
            return Err(config_err(format!(
                "t_sim must be in (0, 1], got {}",
                self.t_sim
            )));
        }
        if self.keyword_thresholds.len() > self.keyword_sets.len() {
            return Err(config_err(format!(
                "{} keyword thresholds for {} keyword sets",
                self.keyword_thresholds.len(),
                self.keyword_sets.len()
            )));
        }
        if self.keyword_thresholds.contains(&0) {
            return Err(config_err("keyword thresholds must be ≥ 1"));
        }
        if self.class_words.len() != self.classes.len() {
            return Err(config_err(format!(
                "{} class_words entries for {} classes",
                self.class_words.len(),
                self.classes.len()
            )));
        }
        if self.folds < 2 {
            return Err(config_err("folds must be ≥ 2"));
        }
        if !matches!(self.predict_scope.as_str(), "selected" | "all") {
            return Err(config_err(format!(
                "predict_scope must be `selected` or `all`, got `{}`",
                self.predict_scope
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 prefix over every parameter except the output directory,
    /// so the same experiment written to two places carries the same hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            dims: self.dims,
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            subsample: self.subsample,
            seed: self.seed,
            workers: self.workers,
            ..TrainParams::default()
        }
    }

    pub fn ensemble_params(&self) -> EnsembleParams {
        EnsembleParams {
            forest: ForestParams {
                n_trees: self.n_trees,
                max_depth: (self.max_depth > 0).then_some(self.max_depth),
                min_samples_leaf: self.min_samples_leaf,
                seed: self.seed,
                ..ForestParams::default()
            },
            boost: self.boost,
            contextual: self.contextual,
        }
    }

    pub fn class_specs(&self) -> anyhow::Result<Vec<ClassSpec>> {
        if self.classes.len() < 2 {
            return Err(config_err("at least two classes must be configured"));
        }
        Ok(self
            .classes
            .iter()
            .zip(&self.class_words)
            .map(|(name, words)| ClassSpec::new(name.clone(), words.split_whitespace()))
            .collect())
    }

    pub fn threshold(&self, i: usize) -> usize {
        self.keyword_thresholds.get(i).copied().unwrap_or(1)
    }

    pub fn embedding_path(&self) -> PathBuf {
        self.embedding
            .clone()
            .unwrap_or_else(|| self.output_dir.join(crate::output::EMBEDDING_BIN))
    }

    pub fn model_path(&self) -> PathBuf {
        self.output_dir.join(crate::output::MODEL_BIN)
    }
}
