//! Seeded synthetic forums for tests, demos and the bundled sample data.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classify::{default_class_specs, ClassSpec};
use crate::corpus::{ForumCorpus, Post, Thread};
use crate::embedding::EmbeddingMatrix;
use crate::preprocess::TokenizedDoc;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub threads: usize,
    pub dims: usize,
    /// Extra topic words per class besides its defining words.
    pub topic_words: usize,
    pub background_words: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a token is drawn from the thread's own class topic.
    pub topic_rate: f64,
    /// Probability that a token is drawn from a different class's topic.
    pub confusion_rate: f64,
    /// Spread of topic word vectors around their class center.
    pub noise: f64,
    /// Make first-post length grow with the class index.
    pub length_signal: bool,
    /// Fraction of threads containing "hack" and "how" keywords.
    pub keyword_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            threads: 400,
            dims: 16,
            topic_words: 12,
            background_words: 80,
            min_tokens: 15,
            max_tokens: 40,
            topic_rate: 0.35,
            confusion_rate: 0.05,
            noise: 0.35,
            length_signal: false,
            keyword_rate: 0.3,
            seed: 7,
        }
    }
}

pub struct SyntheticForum {
    pub corpus: ForumCorpus,
    /// Class index per thread, in corpus order.
    pub classes: Vec<usize>,
    pub specs: Vec<ClassSpec>,
    /// Vectors every generated word was drawn around.
    pub embedding: EmbeddingMatrix,
}

impl SyntheticForum {
    pub fn labels(&self) -> impl Iterator<Item = (&str, &str)> {
        self.corpus
            .threads()
            .iter()
            .zip(&self.classes)
            .map(|(t, &c)| (t.thread_id.as_str(), self.specs[c].name.as_str()))
    }

    /// `(thread_id, annotator_id, label)` from `raters` annotators, each of
    /// whom replaces the true label by a uniformly random other class with
    /// probability `flip_rate`.
    pub fn annotations(
        &self,
        raters: usize,
        flip_rate: f64,
        seed: u64,
    ) -> Vec<(String, String, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.specs.len();
        let mut out = Vec::with_capacity(self.classes.len() * raters);
        for (t, &c) in self.corpus.threads().iter().zip(&self.classes) {
            for r in 0..raters {
                let label = if rng.gen::<f64>() < flip_rate {
                    (c + rng.gen_range(1..k)) % k
                } else {
                    c
                };
                out.push((
                    t.thread_id.clone(),
                    format!("a{}", r + 1),
                    self.specs[label].name.clone(),
                ));
            }
        }
        out
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn unit(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..m).map(|_| gaussian(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub const KEYWORD_FILLERS: [&str; 2] = ["hack", "how"];

/// Four-class forum whose class topics cluster around the default class
/// words. Threads are labeled round-robin so classes are balanced.
pub fn synthetic_forum(cfg: &SynthConfig) -> SyntheticForum {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let specs = default_class_specs();
    let m = cfg.dims;

    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut topics: Vec<Vec<usize>> = Vec::new();
    for (c, spec) in specs.iter().enumerate() {
        let center = unit(&mut rng, m);
        let mut ids = Vec::new();
        let names = spec
            .words
            .iter()
            .cloned()
            .chain((0..cfg.topic_words).map(|k| format!("topic{c}w{k}")));
        for name in names {
            let v: Vec<f64> = center
                .iter()
                .map(|x| x + cfg.noise * gaussian(&mut rng) / (m as f64).sqrt())
                .collect();
            ids.push(rows.len());
            rows.push((name, v));
        }
        topics.push(ids);
    }
    let background: Vec<usize> = (0..cfg.background_words)
        .map(|k| {
            rows.push((format!("word{k}"), unit(&mut rng, m)));
            rows.len() - 1
        })
        .collect();
    let fillers: Vec<usize> = KEYWORD_FILLERS
        .iter()
        .map(|w| {
            rows.push((w.to_string(), unit(&mut rng, m)));
            rows.len() - 1
        })
        .collect();
    // Zipf-like background frequencies.
    let bg_weights = WeightedIndex::new((1..=background.len()).map(|r| 1.0 / r as f64)).unwrap();

    let n_classes = specs.len();
    let mut threads = Vec::with_capacity(cfg.threads);
    let mut classes = Vec::with_capacity(cfg.threads);
    for t in 0..cfg.threads {
        let c = t % n_classes;
        let n_tok = rng.gen_range(cfg.min_tokens..=cfg.max_tokens);
        let mut words: Vec<&str> = Vec::with_capacity(n_tok + 2);
        for _ in 0..n_tok {
            let r: f64 = rng.gen();
            let id = if r < cfg.topic_rate {
                *topics[c].choose(&mut rng).unwrap()
            } else if r < cfg.topic_rate + cfg.confusion_rate {
                let other = (c + rng.gen_range(1..n_classes)) % n_classes;
                *topics[other].choose(&mut rng).unwrap()
            } else {
                background[bg_weights.sample(&mut rng)]
            };
            words.push(&rows[id].0);
        }
        if rng.gen::<f64>() < cfg.keyword_rate {
            for &f in &fillers {
                let at = rng.gen_range(0..=words.len());
                words.insert(at, &rows[f].0);
            }
        }
        let split = words.len().min(rng.gen_range(2..=5));
        let title = words[..split].join(" ");
        let mut body = String::new();
        for (i, w) in words[split..].iter().enumerate() {
            if i > 0 {
                body.push(if i % 9 == 0 { '\n' } else { ' ' });
            }
            body.push_str(w);
        }
        if cfg.length_signal {
            // Stopwords only: length changes, tokens do not.
            let pad = 60 * (c + 1) + rng.gen_range(0..20);
            for _ in 0..pad {
                body.push_str(" the");
            }
        }
        // Most threads get no reply; a few get several.
        let replies = match rng.gen_range(0..10) {
            0..=4 => 0,
            5..=7 => 1,
            _ => rng.gen_range(2..6),
        };
        let mut posts = vec![Post {
            post_id: format!("t{t:04}-p0"),
            author: format!("user{}", rng.gen_range(0..150)),
            timestamp: None,
            body,
        }];
        for r in 0..replies {
            let len = rng.gen_range(2..12);
            let text: Vec<&str> = (0..len)
                .map(|_| rows[background[bg_weights.sample(&mut rng)]].0.as_str())
                .collect();
            posts.push(Post {
                post_id: format!("t{t:04}-p{}", r + 1),
                author: format!("user{}", rng.gen_range(0..150)),
                timestamp: None,
                body: text.join(" "),
            });
        }
        threads.push(Thread {
            thread_id: format!("t{t:04}"),
            title,
            posts,
        });
        classes.push(c);
    }

    SyntheticForum {
        corpus: ForumCorpus::new("synthetic", threads).expect("generated ids are unique"),
        classes,
        specs,
        embedding: EmbeddingMatrix::from_rows(rows).expect("generated rows are consistent"),
    }
}

/// Documents over a small vocabulary in which `alpha` and `beta` occur in
/// exactly the same kind of contexts and `gamma` only in unrelated ones.
/// Returns roughly `n_tokens` tokens.
pub fn twin_context_docs(n_tokens: usize, seed: u64) -> Vec<TokenizedDoc> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let left: Vec<String> = (0..8).map(|i| format!("left{i}")).collect();
    let right: Vec<String> = (0..8).map(|i| format!("right{i}")).collect();
    let other: Vec<String> = (0..30).map(|i| format!("other{i}")).collect();
    let mut docs = Vec::new();
    let mut total = 0;
    while total < n_tokens {
        let mut toks = Vec::with_capacity(12);
        if rng.gen_bool(0.5) {
            for _ in 0..3 {
                toks.push(left.choose(&mut rng).unwrap().clone());
            }
            toks.push(if rng.gen_bool(0.5) { "alpha" } else { "beta" }.to_string());
            for _ in 0..3 {
                toks.push(right.choose(&mut rng).unwrap().clone());
            }
        } else {
            for _ in 0..3 {
                toks.push(other.choose(&mut rng).unwrap().clone());
            }
            toks.push("gamma".to_string());
            for _ in 0..3 {
                toks.push(other.choose(&mut rng).unwrap().clone());
            }
        }
        total += toks.len();
        docs.push(TokenizedDoc::from_tokens(format!("d{}", docs.len()), toks));
    }
    docs
}
