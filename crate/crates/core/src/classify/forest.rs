//! Bagged CART trees with Gini impurity and per-sample weights.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    /// Features examined per split; `None` means `ceil(sqrt(F))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            bootstrap: true,
            max_features: None,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    n_classes: usize,
    n_features: usize,
}

impl Forest {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Fraction of trees voting for each class.
    pub fn vote_fractions(&self, row: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.n_classes];
        for t in &self.trees {
            votes[t.predict(row)] += 1.0;
        }
        let n = self.trees.len() as f64;
        votes.iter_mut().for_each(|v| *v /= n);
        votes
    }

    /// Majority over trees; ties go to the lowest class index.
    pub fn predict(&self, row: &[f64]) -> usize {
        argmax(&self.vote_fractions(row))
    }
}

/// First index of the maximum.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// SplitMix64 step, used to derive independent per-tree seeds.
pub(crate) fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Train a random forest. `y` holds class indices in `0..n_classes`;
/// `weights` (default all 1) scale each sample's contribution to impurity
/// and leaf votes.
pub fn train_forest(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    weights: Option<&[f64]>,
    params: &ForestParams,
) -> Result<Forest> {
    if x.is_empty() {
        return Err(Error::invalid("cannot train a forest on zero samples"));
    }
    if x.len() != y.len() || weights.is_some_and(|w| w.len() != x.len()) {
        return Err(Error::invalid("feature, label and weight counts differ"));
    }
    let n_features = x[0].len();
    if n_features == 0 {
        return Err(Error::invalid("samples have no features"));
    }
    if let Some(i) = x.iter().position(|r| r.len() != n_features) {
        return Err(Error::DimensionMismatch {
            expected: n_features,
            got: x[i].len(),
        });
    }
    if let Some(i) = x.iter().position(|r| r.iter().any(|v| v.is_nan())) {
        return Err(Error::invalid(format!("sample {i} has a NaN feature")));
    }
    if let Some(&c) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::invalid(format!(
            "label {c} out of range for {n_classes} classes"
        )));
    }
    if let Some(w) = weights {
        if w.iter().any(|&w| w.is_nan() || w < 0.0 || w.is_infinite()) {
            return Err(Error::invalid("sample weights must be finite and ≥ 0"));
        }
    }
    let mut present = vec![false; n_classes];
    y.iter().for_each(|&c| present[c] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid(
            "need at least two classes to train a forest",
        ));
    }
    if params.n_trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }

    let mtry = params
        .max_features
        .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
        .clamp(1, n_features);
    let builder = TreeBuilder {
        x,
        y,
        n_classes,
        mtry,
        max_depth: params.max_depth.unwrap_or(usize::MAX),
        min_leaf: params.min_samples_leaf.max(1),
    };
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, t as u64));
            let mut w: Vec<f64> = match weights {
                Some(w) => w.to_vec(),
                None => vec![1.0; x.len()],
            };
            if params.bootstrap {
                let mut counts = vec![0u32; x.len()];
                for _ in 0..x.len() {
                    counts[rng.gen_range(0..x.len())] += 1;
                }
                w.iter_mut().zip(&counts).for_each(|(w, &c)| *w *= c as f64);
            }
            builder.build(&w, &mut rng)
        })
        .collect();
    Ok(Forest {
        trees,
        n_classes,
        n_features,
    })
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    max_depth: usize,
    min_leaf: usize,
}

fn gini(counts: impl Iterator<Item = f64>, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.map(|c| (c / total) * (c / total)).sum::<f64>()
}

struct Split {
    feature: usize,
    threshold: f64,
    /// Weighted child impurity; lower is better.
    score: f64,
}

impl TreeBuilder<'_> {
    fn build(&self, w: &[f64], rng: &mut ChaCha8Rng) -> Tree {
        let idx: Vec<usize> = (0..self.x.len()).filter(|&i| w[i] > 0.0).collect();
        let mut nodes = vec![Node::Leaf { class: 0 }];
        let mut stack = vec![(0usize, idx, 0usize)];
        let mut features: Vec<usize> = (0..self.x[0].len()).collect();

        while let Some((slot, idx, depth)) = stack.pop() {
            let mut dist = vec![0.0; self.n_classes];
            for &i in &idx {
                dist[self.y[i]] += w[i];
            }
            let leaf = Node::Leaf {
                class: argmax(&dist),
            };
            let pure = dist.iter().filter(|&&c| c > 0.0).count() <= 1;
            if pure || depth >= self.max_depth || idx.len() < 2 * self.min_leaf {
                nodes[slot] = leaf;
                continue;
            }
            let Some(split) = self.best_split(&idx, w, &dist, &mut features, rng) else {
                nodes[slot] = leaf;
                continue;
            };
            let (l, r): (Vec<usize>, Vec<usize>) = idx
                .iter()
                .partition(|&&i| self.x[i][split.feature] <= split.threshold);
            let left = nodes.len();
            nodes.push(Node::Leaf { class: 0 });
            let right = nodes.len();
            nodes.push(Node::Leaf { class: 0 });
            nodes[slot] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
            stack.push((right, r, depth + 1));
            stack.push((left, l, depth + 1));
        }
        Tree { nodes }
    }

    /// Examines `mtry` random features; if none of them can split the node
    /// (all constant), keeps drawing from the rest.
    fn best_split(
        &self,
        idx: &[usize],
        w: &[f64],
        dist: &[f64],
        features: &mut [usize],
        rng: &mut ChaCha8Rng,
    ) -> Option<Split> {
        features.shuffle(rng);
        let total: f64 = dist.iter().sum();
        let mut best: Option<Split> = None;
        let mut order = idx.to_vec();
        let mut left = vec![0.0; self.n_classes];
        for (k, &f) in features.iter().enumerate() {
            if k >= self.mtry && best.is_some() {
                break;
            }
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]));
            left.iter_mut().for_each(|c| *c = 0.0);
            let mut wl = 0.0;
            for pos in 0..order.len() - 1 {
                let i = order[pos];
                left[self.y[i]] += w[i];
                wl += w[i];
                let (lo, hi) = (self.x[i][f], self.x[order[pos + 1]][f]);
                let n_left = pos + 1;
                if lo == hi || n_left < self.min_leaf || order.len() - n_left < self.min_leaf {
                    continue;
                }
                let wr = total - wl;
                let score = wl * gini(left.iter().copied(), wl)
                    + wr * gini(dist.iter().zip(&left).map(|(d, l)| d - l), wr);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if !(threshold >= lo && threshold < hi) {
                        threshold = lo;
                    }
                    best = Some(Split {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}
