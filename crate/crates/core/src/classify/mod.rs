//! Class-affinity weighted ensemble classification.
//!
//! For every class `c`:
//!
//! 1. the class vector is the mean embedding of the class's defining words;
//! 2. the affinity vector `β_c` is the softmax, over the whole vocabulary, of
//!    each word's cosine similarity to the class vector;
//! 3. threads are projected with every word vector `v_i` scaled by `β_c[i]`;
//! 4. a random forest is trained on those projections (plus contextual
//!    features) with examples of class `c` up-weighted.
//!
//! At prediction time every per-class forest casts one vote and the
//! plurality wins.

pub mod forest;

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Thread;
use crate::embedding::EmbeddingMatrix;
use crate::identify::KeywordSet;
use crate::metrics::{cross_validate, EvalReport};
use crate::preprocess::TokenizedDoc;
use crate::threadspace::{cosine_with_norms, norm, project_weighted};
use crate::{Error, Result};

pub use forest::{train_forest, Forest, ForestParams};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub words: Vec<String>,
}

impl ClassSpec {
    pub fn new<S: Into<String>>(
        name: impl Into<String>,
        words: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            words: words.into_iter().map(|w| w.into().to_lowercase()).collect(),
        }
    }
}

/// The four classes and defining words used for security forums.
pub fn default_class_specs() -> Vec<ClassSpec> {
    vec![
        ClassSpec::new("Hacks", ["tutorial", "guide", "steps"]),
        ClassSpec::new("Services", ["tool", "price", "pay"]),
        ClassSpec::new("Alerts", ["announced", "reported", "hacked"]),
        ClassSpec::new("Experiences", ["article", "story", "challenge"]),
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassVector {
    pub values: Vec<f64>,
    /// Defining words that were not in the vocabulary.
    pub missing: Vec<String>,
}

/// Mean embedding of the class's in-vocabulary defining words.
pub fn class_vector(spec: &ClassSpec, emb: &EmbeddingMatrix) -> Result<ClassVector> {
    let mut values = vec![0.0; emb.dims()];
    let mut found = 0usize;
    let mut missing = Vec::new();
    for w in &spec.words {
        match emb.vector_of(w) {
            Some(v) => {
                values.iter_mut().zip(v).for_each(|(a, x)| *a += x);
                found += 1;
            }
            None => missing.push(w.clone()),
        }
    }
    if found == 0 {
        return Err(Error::EmptyClass(spec.name.clone()));
    }
    values.iter_mut().for_each(|a| *a /= found as f64);
    if norm(&values) == 0.0 {
        return Err(Error::ZeroNorm(format!("class vector of `{}`", spec.name)));
    }
    Ok(ClassVector { values, missing })
}

/// Numerically stable softmax (the maximum is subtracted first).
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = xs.iter().map(|x| (x - hi).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    out
}

/// Per-word affinity to one class; positive, sums to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffinityVector(pub Vec<f64>);

impl AffinityVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine similarity of every vocabulary word to the class vector.
pub fn class_similarities(emb: &EmbeddingMatrix, cvec: &ClassVector) -> Result<Vec<f64>> {
    if cvec.values.len() != emb.dims() {
        return Err(Error::DimensionMismatch {
            expected: emb.dims(),
            got: cvec.values.len(),
        });
    }
    let nc = norm(&cvec.values);
    if nc == 0.0 {
        return Err(Error::ZeroNorm("class vector".into()));
    }
    emb.columns()
        .enumerate()
        .map(|(i, v)| {
            let nv = norm(v);
            if nv == 0.0 {
                return Err(Error::ZeroNorm(format!(
                    "vector of `{}`",
                    emb.vocab().word(i)
                )));
            }
            Ok(cosine_with_norms(v, nv, &cvec.values, nc))
        })
        .collect()
}

pub fn affinity_vector(emb: &EmbeddingMatrix, cvec: &ClassVector) -> Result<AffinityVector> {
    Ok(AffinityVector(softmax(&class_similarities(emb, cvec)?)))
}

/// Thread projection under the class-specific embedding `β_c[i] · v_i`.
pub fn weighted_thread_projection(
    doc: &TokenizedDoc,
    emb: &EmbeddingMatrix,
    beta: &AffinityVector,
) -> Result<Vec<f64>> {
    project_weighted(doc, emb, &beta.0).map(|tv| tv.full)
}

/// Non-lexical thread signals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextualFeatures {
    pub newlines_first_post: usize,
    /// In characters.
    pub length_first_post: usize,
    pub reply_count: usize,
    pub avg_reply_newlines: f64,
    pub avg_reply_length: f64,
    /// Occurrences of each keyword set's words in the document.
    pub keyword_counts: Vec<usize>,
}

/// Number of features besides the keyword-set counts.
pub const BASE_CONTEXTUAL_FEATURES: usize = 5;

impl ContextualFeatures {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![
            self.newlines_first_post as f64,
            self.length_first_post as f64,
            self.reply_count as f64,
            self.avg_reply_newlines,
            self.avg_reply_length,
        ];
        v.extend(self.keyword_counts.iter().map(|&c| c as f64));
        v
    }
}

fn newlines(s: &str) -> usize {
    s.bytes().filter(|&b| b == b'\n').count()
}

pub fn contextual_features(
    thread: &Thread,
    doc: &TokenizedDoc,
    sets: &[KeywordSet],
) -> ContextualFeatures {
    let first = &thread.first_post().body;
    let replies = thread.replies();
    let n = replies.len();
    let avg = |f: &dyn Fn(&str) -> usize| {
        if n == 0 {
            0.0
        } else {
            replies.iter().map(|p| f(&p.body)).sum::<usize>() as f64 / n as f64
        }
    };
    ContextualFeatures {
        newlines_first_post: newlines(first),
        length_first_post: first.chars().count(),
        reply_count: n,
        avg_reply_newlines: avg(&newlines),
        avg_reply_length: avg(&|s: &str| s.chars().count()),
        keyword_counts: sets.iter().map(|s| s.count_in(doc)).collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleParams {
    pub forest: ForestParams,
    /// Sample weight for examples of the favored class (others get 1).
    pub boost: f64,
    /// Append contextual features to the projection features.
    pub contextual: bool,
}

impl Default for EnsembleParams {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            boost: 2.0,
            contextual: true,
        }
    }
}

/// One labeled thread.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub thread: &'a Thread,
    pub doc: &'a TokenizedDoc,
    pub class: usize,
}

/// Affinity vectors for every class plus the feature rows they induce.
/// Computed once and reused across cross-validation folds.
pub struct FeatureTable {
    pub betas: Vec<AffinityVector>,
    /// `rows[c][i]` is example `i` seen through class `c`.
    pub rows: Vec<Vec<Vec<f64>>>,
    pub labels: Vec<usize>,
    pub missing_words: Vec<(String, Vec<String>)>,
}

fn features_for(
    doc: &TokenizedDoc,
    ctx: Option<&[f64]>,
    emb: &EmbeddingMatrix,
    beta: &AffinityVector,
) -> Result<Vec<f64>> {
    let mut row = weighted_thread_projection(doc, emb, beta)?;
    if let Some(ctx) = ctx {
        row.extend_from_slice(ctx);
    }
    Ok(row)
}

impl FeatureTable {
    pub fn build(
        examples: &[Example<'_>],
        specs: &[ClassSpec],
        emb: &EmbeddingMatrix,
        sets: &[KeywordSet],
        contextual: bool,
    ) -> Result<Self> {
        if specs.len() < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if let Some(e) = examples.iter().find(|e| e.class >= specs.len()) {
            return Err(Error::invalid(format!(
                "example `{}` has class index {} outside {} classes",
                e.doc.thread_id,
                e.class,
                specs.len()
            )));
        }
        let mut missing_words = Vec::new();
        let mut betas = Vec::with_capacity(specs.len());
        for spec in specs {
            let cv = class_vector(spec, emb)?;
            if !cv.missing.is_empty() {
                missing_words.push((spec.name.clone(), cv.missing.clone()));
            }
            betas.push(affinity_vector(emb, &cv)?);
        }
        let ctx: Vec<Option<Vec<f64>>> = examples
            .iter()
            .map(|e| contextual.then(|| contextual_features(e.thread, e.doc, sets).to_vec()))
            .collect();
        let rows = betas
            .par_iter()
            .map(|beta| {
                examples
                    .iter()
                    .zip(&ctx)
                    .map(|(e, c)| features_for(e.doc, c.as_deref(), emb, beta))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            betas,
            rows,
            labels: examples.iter().map(|e| e.class).collect(),
            missing_words,
        })
    }

    /// Train one class-biased forest per class on the examples at `subset`.
    pub fn train(&self, subset: &[usize], params: &EnsembleParams) -> Result<Vec<Forest>> {
        if params.boost.is_nan() || params.boost <= 0.0 || params.boost.is_infinite() {
            return Err(Error::invalid("boost must be a positive finite number"));
        }
        let n_classes = self.betas.len();
        let y: Vec<usize> = subset.iter().map(|&i| self.labels[i]).collect();
        (0..n_classes)
            .into_par_iter()
            .map(|c| {
                let x: Vec<Vec<f64>> = subset.iter().map(|&i| self.rows[c][i].clone()).collect();
                let w: Vec<f64> = y
                    .iter()
                    .map(|&l| if l == c { params.boost } else { 1.0 })
                    .collect();
                let fp = ForestParams {
                    seed: forest::derive_seed(params.forest.seed, 1 + c as u64),
                    ..params.forest.clone()
                };
                train_forest(&x, &y, n_classes, Some(&w), &fp)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub classes: Vec<ClassSpec>,
    pub betas: Vec<AffinityVector>,
    pub forests: Vec<Forest>,
    pub keyword_sets: Vec<KeywordSet>,
    pub contextual: bool,
    pub dims: usize,
    pub embedding_fingerprint: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// Class chosen by each per-class forest.
    pub forest_votes: Vec<usize>,
    /// Per class, the tree-vote fraction summed over all forests.
    pub summed_fractions: Vec<f64>,
}

impl Prediction {
    /// How many forests voted for each class.
    pub fn vote_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.summed_fractions.len()];
        self.forest_votes.iter().for_each(|&c| counts[c] += 1);
        counts
    }
}

/// Plurality over forest votes; ties go to the larger summed tree-vote
/// fraction, then to the earlier class.
pub fn combine_votes(forest_votes: &[usize], summed_fractions: &[f64]) -> usize {
    let mut counts = vec![0usize; summed_fractions.len()];
    forest_votes.iter().for_each(|&c| counts[c] += 1);
    let mut best = 0;
    for c in 1..counts.len() {
        let better = counts[c] > counts[best]
            || (counts[c] == counts[best] && summed_fractions[c] > summed_fractions[best]);
        if better {
            best = c;
        }
    }
    best
}

const MODEL_MAGIC: &[u8; 8] = b"TSMODEL\0";
const MODEL_VERSION: u32 = 1;

impl EnsembleModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.name.as_str())
    }

    /// `2m`, plus five contextual features and one per keyword set when
    /// contextual features are on.
    pub fn feature_len(&self) -> usize {
        2 * self.dims
            + if self.contextual {
                BASE_CONTEXTUAL_FEATURES + self.keyword_sets.len()
            } else {
                0
            }
    }

    pub fn check_embedding(&self, emb: &EmbeddingMatrix) -> Result<()> {
        if emb.fingerprint() != self.embedding_fingerprint {
            return Err(Error::invalid(
                "model was trained against a different embedding",
            ));
        }
        Ok(())
    }

    /// Feature row of a thread as seen by class `c`'s forest.
    pub fn features(
        &self,
        c: usize,
        emb: &EmbeddingMatrix,
        thread: &Thread,
        doc: &TokenizedDoc,
    ) -> Result<Vec<f64>> {
        let ctx = self
            .contextual
            .then(|| contextual_features(thread, doc, &self.keyword_sets).to_vec());
        features_for(doc, ctx.as_deref(), emb, &self.betas[c])
    }

    pub fn predict(
        &self,
        emb: &EmbeddingMatrix,
        thread: &Thread,
        doc: &TokenizedDoc,
    ) -> Result<Prediction> {
        let rows = (0..self.n_classes())
            .map(|c| self.features(c, emb, thread, doc))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.predict_rows(&rows))
    }

    fn predict_rows(&self, rows: &[Vec<f64>]) -> Prediction {
        let mut summed = vec![0.0; self.n_classes()];
        let mut votes = Vec::with_capacity(self.n_classes());
        for (f, row) in self.forests.iter().zip(rows) {
            let fr = f.vote_fractions(row);
            summed.iter_mut().zip(&fr).for_each(|(s, x)| *s += x);
            votes.push(forest::argmax(&fr));
        }
        Prediction {
            class: combine_votes(&votes, &summed),
            forest_votes: votes,
            summed_fractions: summed,
        }
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e| Error::Format(format!("writing model: {e}"));
        out.write_all(MODEL_MAGIC).map_err(io)?;
        out.write_all(&MODEL_VERSION.to_le_bytes()).map_err(io)?;
        bincode::serialize_into(out, self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)
            .map_err(|_| Error::Format("truncated model file".into()))?;
        if &head[..8] != MODEL_MAGIC {
            return Err(Error::Format("not a model file".into()));
        }
        let version = u32::from_le_bytes(head[8..].try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {version}"
            )));
        }
        bincode::deserialize_from(r).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}

fn check_coverage(examples: &[Example<'_>], specs: &[ClassSpec]) -> Result<()> {
    let mut seen = vec![false; specs.len()];
    for e in examples {
        if let Some(s) = seen.get_mut(e.class) {
            *s = true;
        }
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!(
            "class `{}` has no labeled examples",
            specs[c].name
        )));
    }
    Ok(())
}

pub fn train_ensemble(
    examples: &[Example<'_>],
    specs: &[ClassSpec],
    emb: &EmbeddingMatrix,
    sets: &[KeywordSet],
    params: &EnsembleParams,
) -> Result<EnsembleModel> {
    check_coverage(examples, specs)?;
    let table = FeatureTable::build(examples, specs, emb, sets, params.contextual)?;
    let all: Vec<usize> = (0..examples.len()).collect();
    let forests = table.train(&all, params)?;
    Ok(EnsembleModel {
        classes: specs.to_vec(),
        betas: table.betas,
        forests,
        keyword_sets: sets.to_vec(),
        contextual: params.contextual,
        dims: emb.dims(),
        embedding_fingerprint: emb.fingerprint(),
    })
}

/// Stratified k-fold evaluation of the ensemble.
pub fn evaluate_ensemble(
    examples: &[Example<'_>],
    specs: &[ClassSpec],
    emb: &EmbeddingMatrix,
    sets: &[KeywordSet],
    params: &EnsembleParams,
    k: usize,
    seed: u64,
) -> Result<EvalReport> {
    check_coverage(examples, specs)?;
    let table = FeatureTable::build(examples, specs, emb, sets, params.contextual)?;
    let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
    cross_validate(&table.labels, &names, k, seed, |train, test| {
        let forests = table.train(train, params)?;
        let model = EnsembleModel {
            classes: specs.to_vec(),
            betas: table.betas.clone(),
            forests,
            keyword_sets: sets.to_vec(),
            contextual: params.contextual,
            dims: emb.dims(),
            embedding_fingerprint: 0,
        };
        Ok(test
            .iter()
            .map(|&i| {
                let rows: Vec<Vec<f64>> =
                    (0..specs.len()).map(|c| table.rows[c][i].clone()).collect();
                model.predict_rows(&rows).class
            })
            .collect())
    })
}
