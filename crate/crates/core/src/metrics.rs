//! Evaluation: confusion matrices, accuracy, weighted F1, stratified
//! k-fold cross-validation and Fleiss' kappa.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabelSet;
use crate::{Error, Result};

/// Counts indexed by (true class, predicted class).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("confusion matrix must be square"));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(
        truth: &[usize],
        predicted: &[usize],
        n_classes: usize,
    ) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::invalid("truth and prediction lengths differ"));
        }
        let mut cm = Self::new(n_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::invalid(format!("class index out of range: {t}/{p}")));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n_classes() != self.n_classes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_classes(),
                got: other.n_classes(),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    /// Precision, recall and F1 of class `c`; undefined ratios are 0.
    pub fn class_metrics(&self, c: usize) -> ClassMetrics {
        let tp = self.counts[c][c] as f64;
        let pred = self.predicted(c) as f64;
        let sup = self.support(c) as f64;
        let precision = if pred > 0.0 { tp / pred } else { 0.0 };
        let recall = if sup > 0.0 { tp / sup } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: self.support(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("accuracy of an empty confusion matrix"));
    }
    let trace: u64 = (0..cm.n_classes()).map(|c| cm.get(c, c)).sum();
    Ok(trace as f64 / total as f64)
}

/// Per-class F1 weighted by true-class support.
pub fn weighted_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("weighted F1 of an empty confusion matrix"));
    }
    Ok((0..cm.n_classes())
        .map(|c| {
            let m = cm.class_metrics(c);
            m.support as f64 / total as f64 * m.f1
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Folds {
    /// Sorted sample indices per fold.
    pub folds: Vec<Vec<usize>>,
    /// Classes with fewer than `k` members (some folds lack them).
    pub undersized: Vec<usize>,
}

/// Stratified k-fold split. Each class's members are shuffled and dealt
/// round-robin; the deal continues where the previous class stopped so fold
/// sizes also differ by at most one.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<Folds> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be ≥ 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the number of samples ({})",
            labels.len()
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut undersized = Vec::new();
    let mut next = 0;
    for (&c, members) in by_class.iter_mut() {
        if members.len() < k {
            undersized.push(c);
        }
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(Folds { folds, undersized })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub samples: usize,
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<String>,
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldResult>,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub weighted_f1_mean: f64,
    pub weighted_f1_std: f64,
    /// Metrics over the summed confusion matrix of all folds.
    pub accuracy: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    pub warnings: Vec<String>,
}

/// Mean and sample standard deviation.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `fit_predict(train, test)` on every stratified fold (in parallel)
/// and aggregates. `fit_predict` returns one predicted class per test index.
pub fn cross_validate<F>(
    labels: &[usize],
    classes: &[String],
    k: usize,
    seed: u64,
    fit_predict: F,
) -> Result<EvalReport>
where
    F: Fn(&[usize], &[usize]) -> Result<Vec<usize>> + Sync,
{
    let n_classes = classes.len();
    let split = stratified_kfold(labels, k, seed)?;
    let mut warnings: Vec<String> = split
        .undersized
        .iter()
        .map(|&c| {
            format!(
                "class `{}` has fewer than {k} examples; some folds lack it",
                classes.get(c).map(String::as_str).unwrap_or("?")
            )
        })
        .collect();

    let results = split
        .folds
        .par_iter()
        .enumerate()
        .map(|(f, test)| {
            let train: Vec<usize> = split
                .folds
                .iter()
                .enumerate()
                .filter(|&(g, _)| g != f)
                .flat_map(|(_, idx)| idx.iter().copied())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            let predicted = fit_predict(&train, test)?;
            if predicted.len() != test.len() {
                return Err(Error::invalid(
                    "fold returned the wrong number of predictions",
                ));
            }
            let truth: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
            let cm = ConfusionMatrix::from_predictions(&truth, &predicted, n_classes)?;
            Ok(FoldResult {
                fold: f,
                samples: test.len(),
                accuracy: accuracy(&cm)?,
                weighted_f1: weighted_f1(&cm)?,
                confusion: cm,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut pooled = ConfusionMatrix::new(n_classes);
    for r in &results {
        pooled.add(&r.confusion)?;
        for (c, name) in classes.iter().enumerate() {
            if r.confusion.support(c) == 0 && r.confusion.predicted(c) == 0 {
                warnings.push(format!(
                    "fold {}: F1 of class `{name}` undefined (no examples, no predictions); counted as 0",
                    r.fold
                ));
            }
        }
    }
    let (accuracy_mean, accuracy_std) =
        mean_std(&results.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let (weighted_f1_mean, weighted_f1_std) =
        mean_std(&results.iter().map(|r| r.weighted_f1).collect::<Vec<_>>());

    Ok(EvalReport {
        classes: classes.to_vec(),
        k,
        seed,
        accuracy: accuracy(&pooled)?,
        weighted_f1: weighted_f1(&pooled)?,
        per_class: (0..n_classes).map(|c| pooled.class_metrics(c)).collect(),
        confusion: pooled,
        folds: results,
        accuracy_mean,
        accuracy_std,
        weighted_f1_mean,
        weighted_f1_std,
        warnings,
    })
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{}-fold stratified cross-validation (seed {})",
            self.k, self.seed
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:>6} {:>8} {:>10} {:>12}",
            "fold", "samples", "accuracy", "weighted_f1"
        );
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{:>6} {:>8} {:>10.4} {:>12.4}",
                f.fold, f.samples, f.accuracy, f.weighted_f1
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "accuracy    {:.4} ± {:.4} (pooled {:.4})",
            self.accuracy_mean, self.accuracy_std, self.accuracy
        );
        let _ = writeln!(
            s,
            "weighted F1 {:.4} ± {:.4} (pooled {:.4})",
            self.weighted_f1_mean, self.weighted_f1_std, self.weighted_f1
        );
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "{:<16} {:>9} {:>9} {:>9} {:>8}",
            "class", "precision", "recall", "f1", "support"
        );
        for (name, m) in self.classes.iter().zip(&self.per_class) {
            let _ = writeln!(
                s,
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                name, m.precision, m.recall, m.f1, m.support
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }
}

/// Fleiss' kappa over a subjects × categories table of rating counts. Every
/// subject must have the same number of ratings (≥ 2).
pub fn fleiss_kappa(ratings: &[Vec<u64>]) -> Result<f64> {
    let Some(first) = ratings.first() else {
        return Err(Error::invalid("Fleiss kappa needs at least one subject"));
    };
    let cats = first.len();
    let n: u64 = first.iter().sum();
    if n < 2 {
        return Err(Error::invalid(
            "Fleiss kappa needs at least two ratings per subject",
        ));
    }
    for (i, row) in ratings.iter().enumerate() {
        if row.len() != cats {
            return Err(Error::DimensionMismatch {
                expected: cats,
                got: row.len(),
            });
        }
        let t: u64 = row.iter().sum();
        if t != n {
            return Err(Error::invalid(format!(
                "subject {i} has {t} ratings, expected {n}"
            )));
        }
    }
    let subjects = ratings.len() as f64;
    let nf = n as f64;
    let p_bar = ratings
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c * c) as f64).sum();
            (sq - nf) / (nf * (nf - 1.0))
        })
        .sum::<f64>()
        / subjects;
    let p_e: f64 = (0..cats)
        .map(|j| {
            let pj = ratings.iter().map(|r| r[j] as f64).sum::<f64>() / (subjects * nf);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Collapse a ratings table to {category `c`, anything else}.
pub fn binarize_ratings(ratings: &[Vec<u64>], c: usize) -> Vec<Vec<u64>> {
    ratings
        .iter()
        .map(|r| {
            let hit = r[c];
            vec![hit, r.iter().sum::<u64>() - hit]
        })
        .collect()
}

/// Ratings table (thread ids in order, counts per declared class) from raw
/// annotations.
pub fn ratings_from_annotations(labels: &LabelSet) -> Result<(Vec<String>, Vec<Vec<u64>>)> {
    let mut table: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for ((thread, _), class) in &labels.annotations {
        let c = labels
            .class_index(class)
            .ok_or_else(|| Error::UnknownClass(class.clone()))?;
        table
            .entry(thread.as_str())
            .or_insert_with(|| vec![0; labels.classes.len()])[c] += 1;
    }
    Ok((
        table.keys().map(|s| s.to_string()).collect(),
        table.into_values().collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub subjects: usize,
    pub raters_per_subject: u64,
    pub overall: f64,
    /// Binary {class, not class} kappa, in declared class order.
    pub per_class: Vec<(String, f64)>,
}

pub fn agreement_report(labels: &LabelSet) -> Result<AgreementReport> {
    let (_, ratings) = ratings_from_annotations(labels)?;
    let overall = fleiss_kappa(&ratings)?;
    let per_class = labels
        .classes
        .iter()
        .enumerate()
        .map(|(c, name)| Ok((name.clone(), fleiss_kappa(&binarize_ratings(&ratings, c))?)))
        .collect::<Result<_>>()?;
    Ok(AgreementReport {
        subjects: ratings.len(),
        raters_per_subject: ratings[0].iter().sum(),
        overall,
        per_class,
    })
}
