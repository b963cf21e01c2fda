//! Tokenization and vocabulary construction.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ForumCorpus, Thread};
use crate::{Error, Result};

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

pub const BIGRAM_JOINER: char = '_';

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stopwords(HashSet<String>);

impl Stopwords {
    /// Parse one token per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        Self(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_lowercase)
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Stopwords {
    /// The bundled English list.
    pub fn bundled() -> &'static Stopwords {
        static BUNDLED: std::sync::OnceLock<Stopwords> = std::sync::OnceLock::new();
        BUNDLED.get_or_init(|| Stopwords::parse(DEFAULT_STOPWORDS))
    }
}

impl<S: Into<String>> FromIterator<S> for Stopwords {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(|s| s.into().to_lowercase()).collect())
    }
}

/// A thread reduced to the tokens the math runs on: surviving unigrams in
/// text order, then the adjacent-pair bigrams over those unigrams.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDoc {
    pub thread_id: String,
    pub tokens: Vec<String>,
    unigram_count: usize,
}

impl TokenizedDoc {
    pub fn new(thread_id: impl Into<String>, unigrams: Vec<String>) -> Self {
        let unigram_count = unigrams.len();
        let mut tokens = unigrams;
        tokens.reserve(unigram_count.saturating_sub(1));
        for i in 1..unigram_count {
            let b = format!("{}{}{}", tokens[i - 1], BIGRAM_JOINER, tokens[i]);
            tokens.push(b);
        }
        Self {
            thread_id: thread_id.into(),
            tokens,
            unigram_count,
        }
    }

    /// A document whose token list is taken verbatim (no bigrams appended).
    pub fn from_tokens(thread_id: impl Into<String>, tokens: Vec<String>) -> Self {
        let unigram_count = tokens.len();
        Self {
            thread_id: thread_id.into(),
            tokens,
            unigram_count,
        }
    }

    pub fn n(&self) -> usize {
        self.tokens.len()
    }

    pub fn unigrams(&self) -> &[String] {
        &self.tokens[..self.unigram_count]
    }

    pub fn bigrams(&self) -> &[String] {
        &self.tokens[self.unigram_count..]
    }
}

/// Title and first post, newline separated. Replies are ignored.
pub fn extract_document(thread: &Thread) -> String {
    let mut s = String::with_capacity(thread.title.len() + 1 + thread.posts[0].body.len());
    s.push_str(&thread.title);
    s.push('\n');
    s.push_str(&thread.first_post().body);
    s
}

/// Four dot-separated groups of 1-3 ASCII digits.
pub fn is_ipv4_like(s: &str) -> bool {
    let mut groups = 0;
    for g in s.split('.') {
        groups += 1;
        if g.is_empty() || g.len() > 3 || !g.bytes().all(|b| b.is_ascii_digit()) {
            return false;
        }
    }
    groups == 4
}

fn is_number(s: &str) -> bool {
    !s.is_empty() && s.chars().all(char::is_numeric)
}

/// Lowercased unigrams surviving the stopword, number and IPv4 filters.
pub fn tokenize(text: &str, stopwords: &Stopwords) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let trimmed = chunk.trim_matches(|c: char| !c.is_alphanumeric());
        if is_ipv4_like(trimmed) {
            continue;
        }
        for tok in chunk.split(|c: char| !c.is_alphanumeric()) {
            if tok.is_empty() || is_number(tok) || stopwords.contains(tok) {
                continue;
            }
            out.push(tok.to_string());
        }
    }
    out
}

/// Unigrams followed by `_`-joined bigrams.
pub fn preprocess_document(text: &str, stopwords: &Stopwords) -> Vec<String> {
    TokenizedDoc::new("", tokenize(text, stopwords)).tokens
}

pub fn preprocess_thread(thread: &Thread, stopwords: &Stopwords) -> TokenizedDoc {
    TokenizedDoc::new(
        thread.thread_id.clone(),
        tokenize(&extract_document(thread), stopwords),
    )
}

/// Tokenize every thread, preserving corpus order.
pub fn preprocess_corpus(corpus: &ForumCorpus, stopwords: &Stopwords) -> Vec<TokenizedDoc> {
    corpus
        .threads()
        .par_iter()
        .map(|t| preprocess_thread(t, stopwords))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    words: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_parts(r.words, r.counts)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            words: v.words,
            counts: v.counts,
        }
    }
}

impl Vocabulary {
    /// Index `i` of the result is `words[i]`. Panics on length mismatch.
    pub fn from_parts(words: Vec<String>, counts: Vec<u64>) -> Self {
        assert_eq!(words.len(), counts.len(), "words/counts length mismatch");
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self {
            words,
            counts,
            index,
        }
    }

    /// Every word gets count 1.
    pub fn from_words<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Self {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        let counts = vec![1; words.len()];
        Self::from_parts(words, counts)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn count(&self, i: usize) -> u64 {
        self.counts[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Tokens with corpus frequency ≥ `min_count`, ordered by descending
/// frequency then lexicographically.
pub fn build_vocabulary(docs: &[TokenizedDoc], min_count: u64) -> Vocabulary {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for d in docs {
        for t in &d.tokens {
            *freq.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = freq
        .into_iter()
        .filter(|&(_, c)| c >= min_count.max(1))
        .collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let (words, counts) = kept.into_iter().map(|(w, c)| (w.to_string(), c)).unzip();
    Vocabulary::from_parts(words, counts)
}
