//! Finding threads of interest.
//!
//! Keyword selection picks seed threads that hit every keyword set at least
//! its threshold number of times. Similarity expansion then adds every
//! remaining projectable thread whose best cosine similarity to a seed
//! reaches `t_sim`. Expansion is a single pass: expanded threads never act
//! as seeds.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::preprocess::{tokenize, Stopwords, TokenizedDoc, BIGRAM_JOINER};
use crate::threadspace::{cosine_with_norms, norm, project_thread, ThreadVector};
use crate::{Error, Result};

pub const DEFAULT_T_SIM: f64 = 0.96;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub name: String,
    words: HashSet<String>,
    pub threshold: usize,
}

impl KeywordSet {
    pub fn new<S: Into<String>>(
        name: impl Into<String>,
        words: impl IntoIterator<Item = S>,
        threshold: usize,
    ) -> Result<Self> {
        let name = name.into();
        let words: HashSet<String> = words
            .into_iter()
            .map(|w| w.into().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Err(Error::invalid(format!("keyword set `{name}` is empty")));
        }
        if threshold == 0 {
            return Err(Error::invalid(format!(
                "keyword set `{name}` needs a threshold ≥ 1"
            )));
        }
        Ok(Self {
            name,
            words,
            threshold,
        })
    }

    /// One keyword per line, `#` comment lines.
    pub fn load(path: impl AsRef<Path>, name: impl Into<String>, threshold: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        Self::new(name, words, threshold)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> BTreeSet<&str> {
        self.words.iter().map(String::as_str).collect()
    }

    /// Keywords that can never match because preprocessing would not
    /// produce them as a token (numbers, stopwords, punctuation, ...).
    pub fn unmatchable(&self, stopwords: &Stopwords) -> Vec<String> {
        let mut out: Vec<String> = self
            .words
            .iter()
            .filter(|w| {
                let parts: Vec<&str> = w.split(BIGRAM_JOINER).collect();
                if parts.len() > 2 {
                    return true;
                }
                let toks = tokenize(&parts.join(" "), stopwords);
                toks.len() != parts.len() || toks.iter().zip(&parts).any(|(t, p)| t != p)
            })
            .cloned()
            .collect();
        out.sort();
        out
    }

    /// Occurrences of this set's words among the document's tokens.
    pub fn count_in(&self, doc: &TokenizedDoc) -> usize {
        doc.tokens
            .iter()
            .filter(|t| self.words.contains(*t))
            .count()
    }
}

fn selected(doc: &TokenizedDoc, sets: &[KeywordSet]) -> bool {
    sets.iter().all(|s| s.count_in(doc) >= s.threshold)
}

/// Threads meeting every set's threshold.
pub fn keyword_select(docs: &[TokenizedDoc], sets: &[KeywordSet]) -> Result<BTreeSet<String>> {
    if sets.is_empty() {
        return Err(Error::invalid(
            "keyword selection needs at least one keyword set",
        ));
    }
    Ok(docs
        .par_iter()
        .filter(|d| selected(d, sets))
        .map(|d| d.thread_id.clone())
        .collect::<Vec<_>>()
        .into_iter()
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    /// Highest cosine similarity to any seed.
    pub score: f64,
    /// Seed achieving `score`; the smallest such id on ties.
    pub best_seed: String,
}

/// Candidates whose best similarity to a seed reaches `t_sim`.
///
/// Zero-norm vectors cannot be compared and are ignored on both sides.
pub fn similarity_expand(
    seeds: &BTreeMap<String, ThreadVector>,
    candidates: &BTreeMap<String, ThreadVector>,
    t_sim: f64,
) -> Result<BTreeMap<String, Expansion>> {
    if !(t_sim > 0.0 && t_sim <= 1.0) {
        return Err(Error::invalid(format!(
            "t_sim must be in (0, 1], got {t_sim}"
        )));
    }
    if seeds.is_empty() {
        return Err(Error::invalid(
            "similarity expansion needs at least one seed thread",
        ));
    }
    if let Some(id) = candidates.keys().find(|id| seeds.contains_key(*id)) {
        return Err(Error::invalid(format!(
            "thread `{id}` is both seed and candidate"
        )));
    }
    let anchors: Vec<(&str, &[f64], f64)> = seeds
        .iter()
        .map(|(id, tv)| (id.as_str(), tv.full.as_slice(), norm(&tv.full)))
        .filter(|a| a.2 > 0.0)
        .collect();

    let hits: Vec<(String, Expansion)> = candidates
        .par_iter()
        .filter_map(|(id, tv)| {
            let nc = norm(&tv.full);
            if nc == 0.0 {
                return None;
            }
            let mut best: Option<(f64, &str)> = None;
            for &(sid, sv, ns) in &anchors {
                if sv.len() != tv.full.len() {
                    continue;
                }
                let s = cosine_with_norms(&tv.full, nc, sv, ns);
                if best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, sid));
                }
            }
            let (score, seed) = best?;
            (score >= t_sim).then(|| {
                (
                    id.clone(),
                    Expansion {
                        score,
                        best_seed: seed.to_string(),
                    },
                )
            })
        })
        .collect();
    Ok(hits.into_iter().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Keyword,
    Similarity,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Keyword => "keyword",
            Provenance::Similarity => "similarity",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub seeds: BTreeSet<String>,
    pub expanded: BTreeMap<String, Expansion>,
    /// Threads with no in-vocabulary tokens; never expansion candidates.
    pub unprojectable: BTreeSet<String>,
    pub total_threads: usize,
}

impl SelectionResult {
    pub fn provenance(&self, id: &str) -> Option<Provenance> {
        if self.seeds.contains(id) {
            Some(Provenance::Keyword)
        } else if self.expanded.contains_key(id) {
            Some(Provenance::Similarity)
        } else {
            None
        }
    }

    pub fn selected(&self) -> BTreeSet<&str> {
        self.seeds
            .iter()
            .map(String::as_str)
            .chain(self.expanded.keys().map(String::as_str))
            .collect()
    }

    pub fn summary(&self) -> SelectionSummary {
        let selected = self.seeds.len() + self.expanded.len();
        SelectionSummary {
            total_threads: self.total_threads,
            keyword: self.seeds.len(),
            similarity: self.expanded.len(),
            selected,
            unprojectable: self.unprojectable.len(),
            fraction_selected: if self.total_threads == 0 {
                0.0
            } else {
                selected as f64 / self.total_threads as f64
            },
        }
    }

    /// `thread_id,provenance,score`, sorted by thread id; score is empty
    /// for keyword-selected threads.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "thread_id,provenance,score")?;
        for id in self.selected() {
            match self.expanded.get(id) {
                Some(e) => writeln!(out, "{id},{},{}", Provenance::Similarity.as_str(), e.score)?,
                None => writeln!(out, "{id},{},", Provenance::Keyword.as_str())?,
            }
        }
        Ok(())
    }

    /// `thread_id,best_seed,score` for every expanded thread.
    pub fn write_audit_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "thread_id,best_seed,score")?;
        for (id, e) in &self.expanded {
            writeln!(out, "{id},{},{}", e.best_seed, e.score)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub total_threads: usize,
    pub keyword: usize,
    pub similarity: usize,
    pub selected: usize,
    pub unprojectable: usize,
    pub fraction_selected: f64,
}

/// Both phases over a tokenized corpus.
pub fn identify_threads(
    docs: &[TokenizedDoc],
    emb: &EmbeddingMatrix,
    sets: &[KeywordSet],
    t_sim: f64,
) -> Result<SelectionResult> {
    let seed_ids = keyword_select(docs, sets)?;
    let projected: Vec<(&str, Result<ThreadVector>)> = docs
        .par_iter()
        .map(|d| (d.thread_id.as_str(), project_thread(d, emb)))
        .collect();

    let mut seeds = BTreeMap::new();
    let mut candidates = BTreeMap::new();
    let mut unprojectable = BTreeSet::new();
    for (id, tv) in projected {
        match tv {
            Ok(tv) if seed_ids.contains(id) => {
                seeds.insert(id.to_string(), tv);
            }
            Ok(tv) => {
                candidates.insert(id.to_string(), tv);
            }
            Err(Error::Unprojectable(_)) => {
                unprojectable.insert(id.to_string());
            }
            Err(e) => return Err(e),
        }
    }
    if seeds.is_empty() {
        return Err(Error::invalid(format!(
            "no projectable seed threads ({} keyword-selected)",
            seed_ids.len()
        )));
    }
    let expanded = similarity_expand(&seeds, &candidates, t_sim)?;
    Ok(SelectionResult {
        seeds: seed_ids,
        expanded,
        unprojectable,
        total_threads: docs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, tokens: &[&str]) -> TokenizedDoc {
        TokenizedDoc::from_tokens(id, tokens.iter().map(|s| s.to_string()).collect())
    }

    fn three_sets(t: usize) -> Vec<KeywordSet> {
        vec![
            KeywordSet::new("a", ["hack"], t).unwrap(),
            KeywordSet::new("b", ["worried"], 1).unwrap(),
            KeywordSet::new("c", ["how"], 1).unwrap(),
        ]
    }

    #[test]
    fn keyword_rule() {
        let sets = three_sets(1);
        let docs = [
            doc("x", &["hack", "worried", "how"]),
            doc("y", &["hack", "hack"]),
        ];
        let sel = keyword_select(&docs, &sets).unwrap();
        assert_eq!(sel.into_iter().collect::<Vec<_>>(), ["x"]);
    }

    #[test]
    fn keyword_threshold_boundary() {
        let sets = vec![KeywordSet::new("a", ["hack"], 3).unwrap()];
        let docs = [doc("two", &["hack", "hack"]), doc("three", &["hack"; 3])];
        let sel = keyword_select(&docs, &sets).unwrap();
        assert_eq!(sel.into_iter().collect::<Vec<_>>(), ["three"]);
        assert!(keyword_select(&docs, &[]).is_err());
    }

    #[test]
    fn keyword_set_validation() {
        assert!(KeywordSet::new("e", Vec::<String>::new(), 1).is_err());
        assert!(KeywordSet::new("e", ["x"], 0).is_err());
        let s = KeywordSet::new("e", [" Hack ", "", "hack"], 1).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.contains("hack"));
    }

    #[test]
    fn unmatchable_keywords_are_reported() {
        let s = KeywordSet::new(
            "e",
            ["hack", "2019", "the", "wi-fi", "hack_wifi", "a_b_c"],
            1,
        )
        .unwrap();
        assert_eq!(
            s.unmatchable(Stopwords::bundled()),
            ["2019", "a_b_c", "the", "wi-fi"]
        );
    }

    #[test]
    fn bigram_keywords_match_bigram_tokens() {
        let s = KeywordSet::new("e", ["hack_wifi"], 1).unwrap();
        let d = TokenizedDoc::new("t", vec!["hack".into(), "wifi".into()]);
        assert_eq!(s.count_in(&d), 1);
    }

    fn tv(v: &[f64]) -> ThreadVector {
        ThreadVector {
            full: v.to_vec(),
            in_vocab_count: 1,
        }
    }

    #[test]
    fn expansion_examples() {
        let seeds: BTreeMap<_, _> = [("s1".to_string(), tv(&[1.0, 0.0, 1.0, 0.0]))].into();
        let cands: BTreeMap<_, _> = [
            ("dup".to_string(), tv(&[1.0, 0.0, 1.0, 0.0])),
            ("orth".to_string(), tv(&[0.0, 1.0, 0.0, 1.0])),
        ]
        .into();
        let out = similarity_expand(&seeds, &cands, 0.96).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out["dup"].score - 1.0).abs() < 1e-12);
        assert_eq!(out["dup"].best_seed, "s1");

        assert!(similarity_expand(&BTreeMap::new(), &cands, 0.96).is_err());
        assert!(similarity_expand(&seeds, &cands, 0.0).is_err());
        assert!(similarity_expand(&seeds, &cands, 1.5).is_err());
        assert!(similarity_expand(&seeds, &seeds, 0.5).is_err());
    }

    #[test]
    fn expansion_matches_all_pairs_oracle() {
        let seeds: BTreeMap<String, ThreadVector> = [
            ("s1", [1.0, 0.2, 0.9, 0.3]),
            ("s2", [0.0, 1.0, 0.1, 1.0]),
            ("s3", [-1.0, 0.5, 0.0, 0.5]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), tv(&v)))
        .collect();
        let cands: BTreeMap<String, ThreadVector> = [
            ("c1", [1.0, 0.25, 0.9, 0.25]),
            ("c2", [0.05, 1.0, 0.1, 0.95]),
            ("c3", [1.0, -1.0, 0.0, 0.0]),
            ("c4", [-1.0, 0.4, 0.1, 0.6]),
            ("c5", [0.5, 0.5, 0.5, 0.5]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), tv(&v)))
        .collect();

        // Hand-rolled all-pairs cosine.
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / (na * nb)
        };
        for t in [0.5, 0.9, 0.96, 0.99] {
            let expected: BTreeSet<&str> = cands
                .iter()
                .filter(|(_, c)| seeds.values().any(|s| cos(&c.full, &s.full) >= t))
                .map(|(k, _)| k.as_str())
                .collect();
            let got = similarity_expand(&seeds, &cands, t).unwrap();
            assert_eq!(
                got.keys().map(String::as_str).collect::<BTreeSet<_>>(),
                expected
            );
            for (id, e) in &got {
                let best = seeds
                    .values()
                    .map(|s| cos(&cands[id].full, &s.full))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((e.score - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn selection_csv_and_summary() {
        let r = SelectionResult {
            seeds: ["b".to_string()].into(),
            expanded: [(
                "a".to_string(),
                Expansion {
                    score: 0.975,
                    best_seed: "b".into(),
                },
            )]
            .into(),
            unprojectable: ["z".to_string()].into(),
            total_threads: 8,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "thread_id,provenance,score\na,similarity,0.975\nb,keyword,\n"
        );
        let s = r.summary();
        assert_eq!((s.keyword, s.similarity, s.selected), (1, 1, 2));
        assert_eq!(s.fraction_selected, 0.25);
        assert_eq!(r.provenance("a"), Some(Provenance::Similarity));
        assert_eq!(r.provenance("z"), None);
    }

    #[test]
    fn identify_end_to_end() {
        let e = EmbeddingMatrix::from_rows([
            ("hack", vec![1.0, 0.0]),
            ("crack", vec![0.98, 0.05]),
            ("cook", vec![0.0, 1.0]),
        ])
        .unwrap();
        let docs = [
            doc("seed", &["hack"]),
            doc("near", &["crack"]),
            doc("far", &["cook"]),
            doc("void", &["qqq"]),
        ];
        let sets = [KeywordSet::new("k", ["hack"], 1).unwrap()];
        let r = identify_threads(&docs, &e, &sets, 0.96).unwrap();
        assert_eq!(r.seeds, ["seed".to_string()].into());
        assert_eq!(r.expanded.keys().collect::<Vec<_>>(), ["near"]);
        assert_eq!(r.unprojectable, ["void".to_string()].into());

        let sets = [KeywordSet::new("k", ["nothing"], 1).unwrap()];
        assert!(identify_threads(&docs, &e, &sets, 0.96).is_err());
    }
}
