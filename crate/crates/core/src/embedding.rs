//! Skip-gram word embeddings trained with negative sampling.
//!
//! Training runs in one of two modes:
//!
//! * `workers == 1`: a single worker with one seeded RNG. Output is
//!   bit-reproducible for a fixed seed.
//! * `workers > 1`: sentences are sharded across workers that update the
//!   shared parameters without synchronization (lost updates are tolerated).
//!   Results depend on scheduling and are not reproducible.
//!
//! Parameters live in relaxed atomics so both modes share one code path and
//! the concurrent mode is free of data races in the Rust sense.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::preprocess::{TokenizedDoc, Vocabulary};
use crate::threadspace::{cosine_similarity, norm};
use crate::{Error, Result};

/// Dense word vectors: column `i` is the vector of vocabulary word `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vocabulary,
    dims: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    /// `data` holds the columns back to back (`dims` values per word).
    pub fn new(vocab: Vocabulary, dims: usize, data: Vec<f64>) -> Result<Self> {
        if dims == 0 {
            return Err(Error::invalid("embedding dimension must be ≥ 1"));
        }
        if data.len() != vocab.len() * dims {
            return Err(Error::DimensionMismatch {
                expected: vocab.len() * dims,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite component in vector of `{}`",
                vocab.word(pos / dims)
            )));
        }
        Ok(Self { vocab, dims, data })
    }

    /// Build from `(word, vector)` rows; every word gets count 1.
    pub fn from_rows<S: Into<String>>(
        rows: impl IntoIterator<Item = (S, Vec<f64>)>,
    ) -> Result<Self> {
        let mut words = Vec::new();
        let mut data = Vec::new();
        let mut dims = None;
        for (w, v) in rows {
            let m = *dims.get_or_insert(v.len());
            if v.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: v.len(),
                });
            }
            words.push(w.into());
            data.extend(v);
        }
        Self::new(Vocabulary::from_words(words), dims.unwrap_or(1), data)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Vocabulary size `d`.
    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn vector_of(&self, word: &str) -> Option<&[f64]> {
        self.vocab.index_of(word).map(|i| self.vector(i))
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dims)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Top-`k` words by cosine similarity to `word`, excluding `word`
    /// itself. Ties go to the lower vocabulary index.
    pub fn nearest_neighbors(&self, word: &str, k: usize) -> Result<Vec<(String, f64)>> {
        let q = self
            .vocab
            .index_of(word)
            .ok_or_else(|| Error::OutOfVocabulary(word.to_string()))?;
        if k == 0 || k >= self.len() {
            return Err(Error::invalid(format!(
                "k must be in 1..={}, got {k}",
                self.len().saturating_sub(1)
            )));
        }
        let query = self.vector(q);
        if norm(query) == 0.0 {
            return Err(Error::ZeroNorm(format!("vector of `{word}`")));
        }
        let mut scored: Vec<(usize, f64)> = (0..self.len())
            .filter(|&i| i != q)
            .map(|i| (i, cosine_similarity(query, self.vector(i)).unwrap_or(0.0)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(i, s)| (self.vocab.word(i).to_string(), s))
            .collect())
    }

    /// FNV-1a over the binary encoding; identifies the embedding a model
    /// was trained against.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        h.write(&(self.len() as u64).to_le_bytes());
        h.write(&(self.dims as u64).to_le_bytes());
        for w in self.vocab.words() {
            h.write(w.as_bytes());
            h.write(&[0]);
        }
        for x in &self.data {
            h.write(&x.to_le_bytes());
        }
        h.0
    }

    /// Text format: a `d m` header line, then `word c1 ... cm` per word.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dims)?;
        for (i, col) in self.columns().enumerate() {
            out.write_all(self.vocab.word(i).as_bytes())?;
            for x in col {
                write!(out, " {x:.7}")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| err(1, "missing header".into()))?
            .map_err(|e| Error::io(origin, e))?;
        let mut it = header.split_whitespace().map(str::parse::<usize>);
        let (d, m) = match (it.next(), it.next(), it.next()) {
            (Some(Ok(d)), Some(Ok(m)), None) if m > 0 => (d, m),
            _ => return Err(err(1, format!("bad header `{header}`, expected `d m`"))),
        };
        let mut words = Vec::with_capacity(d);
        let mut data = Vec::with_capacity(d * m);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap();
            let before = data.len();
            for p in parts {
                let x: f64 = p
                    .parse()
                    .map_err(|_| err(lineno, format!("bad number `{p}`")))?;
                data.push(x);
            }
            let got = data.len() - before;
            if got != m {
                return Err(err(
                    lineno,
                    format!("dimension mismatch for `{word}`: expected {m} values, got {got}"),
                ));
            }
            words.push(word.to_string());
        }
        if words.len() != d {
            return Err(err(
                1,
                format!("header says {d} words, file has {}", words.len()),
            ));
        }
        Self::new(Vocabulary::from_words(words), m, data)
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_text(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_text(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_text(f, path)
    }

    /// Binary format (little endian): magic `TSEMBED\0`, `u32` version,
    /// `u64` d, `u64` m, then per word a `u32` byte length, the UTF-8 bytes
    /// and a `u64` count, then the `d*m` components as `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(BIN_MAGIC)?;
        out.write_all(&BIN_VERSION.to_le_bytes())?;
        out.write_all(&(self.len() as u64).to_le_bytes())?;
        out.write_all(&(self.dims as u64).to_le_bytes())?;
        for (w, c) in self.vocab.words().iter().zip(self.vocab.counts()) {
            out.write_all(&(w.len() as u32).to_le_bytes())?;
            out.write_all(w.as_bytes())?;
            out.write_all(&c.to_le_bytes())?;
        }
        for x in &self.data {
            out.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(reader: R) -> Result<Self> {
        let mut r = BufReader::new(reader);
        let fmt = |e: std::io::Error| Error::Format(format!("truncated embedding file: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != BIN_MAGIC {
            return Err(Error::Format("not a binary embedding file".into()));
        }
        let version = read_u32(&mut r).map_err(fmt)?;
        if version != BIN_VERSION {
            return Err(Error::Format(format!(
                "unsupported embedding version {version}"
            )));
        }
        let d = read_u64(&mut r).map_err(fmt)? as usize;
        let m = read_u64(&mut r).map_err(fmt)? as usize;
        let mut words = Vec::with_capacity(d);
        let mut counts = Vec::with_capacity(d);
        for _ in 0..d {
            let len = read_u32(&mut r).map_err(fmt)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(fmt)?;
            words.push(
                String::from_utf8(buf).map_err(|_| Error::Format("word is not UTF-8".into()))?,
            );
            counts.push(read_u64(&mut r).map_err(fmt)?);
        }
        let mut data = Vec::with_capacity(d * m);
        let mut buf = [0u8; 8];
        for _ in 0..d * m {
            r.read_exact(&mut buf).map_err(fmt)?;
            data.push(f64::from_le_bytes(buf));
        }
        Self::new(Vocabulary::from_parts(words, counts), m, data)
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_binary(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_binary(f)
    }
}

const BIN_MAGIC: &[u8; 8] = b"TSEMBED\0";
const BIN_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainParams {
    pub dims: usize,
    /// Maximum context distance; the effective window per center word is
    /// drawn uniformly from `1..=window`.
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub min_learning_rate: f64,
    /// Frequent-word subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            dims: 100,
            window: 10,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            min_learning_rate: 1e-4,
            subsample: 1e-3,
            seed: 1,
            workers: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean negative-sampling loss per (center, context) pair, per epoch.
    pub epoch_loss: Vec<f64>,
    pub pairs_per_epoch: Vec<u64>,
}

pub fn train_skipgram(
    docs: &[TokenizedDoc],
    vocab: &Vocabulary,
    params: &TrainParams,
) -> Result<EmbeddingMatrix> {
    train_skipgram_with_stats(docs, vocab, params).map(|(m, _)| m)
}

pub fn train_skipgram_with_stats(
    docs: &[TokenizedDoc],
    vocab: &Vocabulary,
    params: &TrainParams,
) -> Result<(EmbeddingMatrix, TrainStats)> {
    if docs.is_empty() {
        return Err(Error::invalid(
            "cannot train an embedding on zero documents",
        ));
    }
    if vocab.is_empty() {
        return Err(Error::invalid(
            "cannot train an embedding with an empty vocabulary",
        ));
    }
    if params.dims == 0 || params.window == 0 || params.epochs == 0 || params.workers == 0 {
        return Err(Error::invalid(
            "dims, window, epochs and workers must all be ≥ 1",
        ));
    }
    if params.learning_rate.is_nan()
        || params.learning_rate <= 0.0
        || params.min_learning_rate < 0.0
    {
        return Err(Error::invalid("learning rates must be positive"));
    }

    // Unigrams and bigrams are separate sentences so no window straddles the
    // boundary between them.
    let sentences: Vec<Vec<u32>> = docs
        .iter()
        .flat_map(|d| [d.unigrams(), d.bigrams()])
        .map(|toks| {
            toks.iter()
                .filter_map(|t| vocab.index_of(t).map(|i| i as u32))
                .collect::<Vec<_>>()
        })
        .filter(|s| s.len() >= 2)
        .collect();

    let m = params.dims;
    let d = vocab.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let input: Vec<AtomicU64> = (0..d * m)
        .map(|_| {
            let x: f64 = rng.gen_range(-0.5..0.5) / m as f64;
            AtomicU64::new(x.to_bits())
        })
        .collect();
    let output: Vec<AtomicU64> = (0..d * m).map(|_| AtomicU64::new(0f64.to_bits())).collect();

    let noise = WeightedIndex::new(vocab.counts().iter().map(|&c| (c as f64).powf(0.75)))
        .map_err(|e| Error::invalid(format!("bad noise distribution: {e}")))?;

    let total = vocab.total_count() as f64;
    let keep_prob: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| {
            if params.subsample <= 0.0 {
                return 1.0;
            }
            let f = c as f64;
            let t = params.subsample * total;
            ((f / t).sqrt() + 1.0) * t / f
        })
        .collect();

    let words_per_epoch: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    let shared = Shared {
        input: &input,
        output: &output,
        dims: m,
        params,
        noise: &noise,
        keep_prob: &keep_prob,
        total_words: (words_per_epoch * params.epochs as u64).max(1) as f64,
    };

    let mut stats = TrainStats::default();
    for epoch in 0..params.epochs {
        let base = epoch as u64 * words_per_epoch;
        let (loss, pairs) = if params.workers == 1 {
            let mut w = Worker::new(&shared, rng.gen());
            w.run(&sentences, base);
            (w.loss, w.pairs)
        } else {
            let chunk = sentences.len().div_ceil(params.workers).max(1);
            let seeds: Vec<u64> = (0..params.workers).map(|_| rng.gen()).collect();
            std::thread::scope(|s| {
                let handles: Vec<_> = sentences
                    .chunks(chunk)
                    .zip(&seeds)
                    .scan(base, |offset, (part, &seed)| {
                        let start = *offset;
                        *offset += part.iter().map(|x| x.len() as u64).sum::<u64>();
                        Some((part, seed, start))
                    })
                    .map(|(part, seed, start)| {
                        let shared = &shared;
                        s.spawn(move || {
                            let mut w = Worker::new(shared, seed);
                            w.run(part, start);
                            (w.loss, w.pairs)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("training worker panicked"))
                    .fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
            })
        };
        stats
            .epoch_loss
            .push(if pairs > 0 { loss / pairs as f64 } else { 0.0 });
        stats.pairs_per_epoch.push(pairs);
    }

    let data: Vec<f64> = input
        .into_iter()
        .map(|a| f64::from_bits(a.into_inner()))
        .collect();
    Ok((EmbeddingMatrix::new(vocab.clone(), m, data)?, stats))
}

struct Shared<'a> {
    input: &'a [AtomicU64],
    output: &'a [AtomicU64],
    dims: usize,
    params: &'a TrainParams,
    noise: &'a WeightedIndex<f64>,
    keep_prob: &'a [f64],
    total_words: f64,
}

struct Worker<'a> {
    s: &'a Shared<'a>,
    rng: ChaCha8Rng,
    hidden: Vec<f64>,
    grad: Vec<f64>,
    loss: f64,
    pairs: u64,
}

#[inline]
fn load(a: &AtomicU64) -> f64 {
    f64::from_bits(a.load(Ordering::Relaxed))
}

#[inline]
fn store(a: &AtomicU64, x: f64) {
    a.store(x.to_bits(), Ordering::Relaxed)
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'a> Worker<'a> {
    fn new(s: &'a Shared<'a>, seed: u64) -> Self {
        Self {
            s,
            rng: ChaCha8Rng::seed_from_u64(seed),
            hidden: vec![0.0; s.dims],
            grad: vec![0.0; s.dims],
            loss: 0.0,
            pairs: 0,
        }
    }

    fn run(&mut self, sentences: &[Vec<u32>], mut processed: u64) {
        let p = self.s.params;
        let mut kept = Vec::new();
        for sent in sentences {
            let progress = processed as f64 / self.s.total_words;
            let lr = (p.learning_rate + (p.min_learning_rate - p.learning_rate) * progress)
                .max(p.min_learning_rate);
            processed += sent.len() as u64;

            kept.clear();
            for &w in sent {
                let keep = self.s.keep_prob[w as usize];
                if keep >= 1.0 || self.rng.gen::<f64>() < keep {
                    kept.push(w as usize);
                }
            }
            for (pos, &center) in kept.iter().enumerate() {
                let reach = self.rng.gen_range(1..=p.window);
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(kept.len() - 1);
                for (ctx_pos, &ctx) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if ctx_pos != pos {
                        self.update(center, ctx, lr);
                    }
                }
            }
        }
    }

    /// One SGNS step: the center's input vector predicts the context word
    /// against `negatives` noise words.
    fn update(&mut self, center: usize, context: usize, lr: f64) {
        let m = self.s.dims;
        let row = &self.s.input[center * m..(center + 1) * m];
        for (h, a) in self.hidden.iter_mut().zip(row) {
            *h = load(a);
        }
        self.grad.iter_mut().for_each(|g| *g = 0.0);

        let mut loss = 0.0;
        for k in 0..=self.s.params.negatives {
            let (target, label) = if k == 0 {
                (context, 1.0)
            } else {
                let t = self.s.noise.sample(&mut self.rng);
                if t == context {
                    continue;
                }
                (t, 0.0)
            };
            let out = &self.s.output[target * m..(target + 1) * m];
            let dot: f64 = self.hidden.iter().zip(out).map(|(h, o)| h * load(o)).sum();
            loss += if label > 0.0 {
                softplus(-dot)
            } else {
                softplus(dot)
            };
            let g = (label - sigmoid(dot)) * lr;
            for ((gr, h), o) in self.grad.iter_mut().zip(&self.hidden).zip(out) {
                let ov = load(o);
                *gr += g * ov;
                store(o, ov + g * h);
            }
        }
        for (a, g) in row.iter().zip(&self.grad) {
            store(a, load(a) + g);
        }
        self.loss += loss;
        self.pairs += 1;
    }
}
