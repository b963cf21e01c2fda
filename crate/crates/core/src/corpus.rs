//! Forum dumps, groundtruth labels and corpus statistics.
//!
//! A dump is newline-delimited JSON, one thread per line:
//!
//! ```text
//! {"thread_id": "t1", "title": "...", "posts": [{"post_id": "p1", "author": "u", "timestamp": null, "body": "..."}]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub author: String,
    /// Kept verbatim, never parsed.
    #[serde(default)]
    pub timestamp: Option<String>,
    pub body: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thread {
    pub thread_id: String,
    pub title: String,
    pub posts: Vec<Post>,
}

impl Thread {
    pub fn first_post(&self) -> &Post {
        &self.posts[0]
    }

    /// Posts after the first one.
    pub fn replies(&self) -> &[Post] {
        &self.posts[1..]
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.thread_id.is_empty() {
            return Err("empty thread_id".into());
        }
        if self.posts.is_empty() {
            return Err("thread has no posts".into());
        }
        if let Some(i) = self.posts.iter().position(|p| p.post_id.is_empty()) {
            return Err(format!("post {i} has an empty post_id"));
        }
        Ok(())
    }
}

/// An immutable, loaded forum dump.
#[derive(Clone, Debug, Default)]
pub struct ForumCorpus {
    pub name: String,
    threads: Vec<Thread>,
    index: HashMap<String, usize>,
}

impl ForumCorpus {
    pub fn new(name: impl Into<String>, threads: Vec<Thread>) -> Result<Self> {
        let mut index = HashMap::with_capacity(threads.len());
        for (pos, t) in threads.iter().enumerate() {
            t.validate().map_err(|msg| Error::InvalidThread {
                id: t.thread_id.clone(),
                msg,
            })?;
            if index.insert(t.thread_id.clone(), pos).is_some() {
                return Err(Error::DuplicateThread(t.thread_id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            threads,
            index,
        })
    }

    pub fn threads(&self) -> &[Thread] {
        &self.threads
    }

    pub fn len(&self) -> usize {
        self.threads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.threads.is_empty()
    }

    pub fn get(&self, thread_id: &str) -> Option<&Thread> {
        self.index.get(thread_id).map(|&i| &self.threads[i])
    }

    pub fn position(&self, thread_id: &str) -> Option<usize> {
        self.index.get(thread_id).copied()
    }

    pub fn contains(&self, thread_id: &str) -> bool {
        self.index.contains_key(thread_id)
    }

    /// Parse a JSONL dump. `origin` is only used in error messages.
    pub fn from_jsonl<R: Read>(name: impl Into<String>, reader: R, origin: &Path) -> Result<Self> {
        let reader = BufReader::new(reader);
        let mut threads = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let thread: Thread = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            thread.validate().map_err(|msg| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                msg,
            })?;
            if !seen.insert(thread.thread_id.clone()) {
                return Err(Error::DuplicateThread(thread.thread_id));
            }
            threads.push(thread);
        }
        Self::new(name, threads)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for t in &self.threads {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Load a JSONL forum dump. The corpus is named after the file stem.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<ForumCorpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ForumCorpus::from_jsonl(name, file, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub name: String,
    pub threads: usize,
    pub posts: usize,
    pub authors: usize,
    /// posts-per-thread → number of threads with exactly that many posts.
    pub posts_per_thread: BTreeMap<usize, usize>,
    /// `(k, P[posts >= k])` for k = 1..=max posts in a thread.
    pub ccdf: Vec<(usize, f64)>,
    pub frac_one_post: f64,
    pub frac_le_two_posts: f64,
}

pub fn corpus_stats(corpus: &ForumCorpus) -> StatsReport {
    let threads = corpus.len();
    let posts = corpus.threads().iter().map(|t| t.posts.len()).sum();
    let authors = corpus
        .threads()
        .iter()
        .flat_map(|t| t.posts.iter().map(|p| p.author.as_str()))
        .collect::<HashSet<_>>()
        .len();

    let mut hist = BTreeMap::new();
    for t in corpus.threads() {
        *hist.entry(t.posts.len()).or_insert(0usize) += 1;
    }

    let mut ccdf = Vec::new();
    if threads > 0 {
        let max = *hist.keys().next_back().unwrap();
        let mut at_least = threads;
        for k in 1..=max {
            ccdf.push((k, at_least as f64 / threads as f64));
            at_least -= hist.get(&k).copied().unwrap_or(0);
        }
    }

    let frac = |n: usize| {
        if threads == 0 {
            0.0
        } else {
            n as f64 / threads as f64
        }
    };
    let one = hist.get(&1).copied().unwrap_or(0);
    let two = hist.get(&2).copied().unwrap_or(0);

    StatsReport {
        name: corpus.name.clone(),
        threads,
        posts,
        authors,
        posts_per_thread: hist,
        ccdf,
        frac_one_post: frac(one),
        frac_le_two_posts: frac(one + two),
    }
}

/// Groundtruth class labels and, optionally, the raw per-annotator labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelSet {
    pub classes: Vec<String>,
    pub labels: BTreeMap<String, String>,
    /// (thread_id, annotator_id) → class.
    pub annotations: BTreeMap<(String, String), String>,
}

impl LabelSet {
    pub fn new(classes: Vec<String>) -> Self {
        Self {
            classes,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    fn check(&self, corpus: &ForumCorpus, id: &str, class: &str) -> Result<()> {
        if !corpus.contains(id) {
            return Err(Error::UnknownThread(id.to_string()));
        }
        if self.class_index(class).is_none() {
            return Err(Error::UnknownClass(class.to_string()));
        }
        Ok(())
    }

    pub fn insert_label(&mut self, corpus: &ForumCorpus, id: &str, class: &str) -> Result<()> {
        self.check(corpus, id, class)?;
        match self.labels.get(id) {
            Some(prev) if prev != class => Err(Error::ConflictingLabel {
                id: id.to_string(),
                first: prev.clone(),
                second: class.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.labels.insert(id.to_string(), class.to_string());
                Ok(())
            }
        }
    }

    pub fn insert_annotation(
        &mut self,
        corpus: &ForumCorpus,
        id: &str,
        annotator: &str,
        class: &str,
    ) -> Result<()> {
        self.check(corpus, id, class)?;
        let key = (id.to_string(), annotator.to_string());
        match self.annotations.get(&key) {
            Some(prev) if prev != class => Err(Error::ConflictingLabel {
                id: format!("{id}/{annotator}"),
                first: prev.clone(),
                second: class.to_string(),
            }),
            Some(_) => Ok(()),
            None => {
                self.annotations.insert(key, class.to_string());
                Ok(())
            }
        }
    }

    /// Read an annotations CSV (`thread_id,annotator_id,label`) into this set.
    pub fn load_annotations(&mut self, path: impl AsRef<Path>, corpus: &ForumCorpus) -> Result<()> {
        let path = path.as_ref();
        for (line, row) in read_csv(path, &["thread_id", "annotator_id", "label"])? {
            self.insert_annotation(corpus, &row[0], &row[1], &row[2])
                .map_err(|e| with_line(e, path, line))?;
        }
        Ok(())
    }

    /// Thread ids grouped by class, in declared class order.
    pub fn by_class(&self) -> Vec<BTreeSet<&str>> {
        let mut out = vec![BTreeSet::new(); self.classes.len()];
        for (id, class) in &self.labels {
            if let Some(c) = self.class_index(class) {
                out[c].insert(id.as_str());
            }
        }
        out
    }
}

/// Read a labels CSV (`thread_id,label`).
pub fn load_labels(
    path: impl AsRef<Path>,
    corpus: &ForumCorpus,
    classes: &[String],
) -> Result<LabelSet> {
    let path = path.as_ref();
    let mut set = LabelSet::new(classes.to_vec());
    for (line, row) in read_csv(path, &["thread_id", "label"])? {
        set.insert_label(corpus, &row[0], &row[1])
            .map_err(|e| with_line(e, path, line))?;
    }
    Ok(set)
}

fn with_line(e: Error, path: &Path, line: usize) -> Error {
    match e {
        Error::ConflictingLabel { .. } | Error::UnknownClass(_) | Error::UnknownThread(_) => {
            Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: e.to_string(),
            }
        }
        other => other,
    }
}

fn read_csv(path: &Path, header: &[&str]) -> Result<Vec<(usize, Vec<String>)>> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;
    let found: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(parse_err(
            1,
            format!(
                "expected header `{}`, found `{}`",
                header.join(","),
                found.join(",")
            ),
        ));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}
