//! Thread projections in the doubled (average ‖ max) embedding space.

use std::io::Write;

use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::preprocess::TokenizedDoc;
use crate::{Error, Result};

/// A thread's position in the `2m`-space.
#[derive(Clone, Debug, PartialEq)]
pub struct ThreadVector {
    /// `avg ‖ max`.
    pub full: Vec<f64>,
    pub in_vocab_count: usize,
}

impl ThreadVector {
    pub fn dims(&self) -> usize {
        self.full.len() / 2
    }

    pub fn avg(&self) -> &[f64] {
        &self.full[..self.dims()]
    }

    pub fn max(&self) -> &[f64] {
        &self.full[self.dims()..]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine similarity operand".into()));
    }
    Ok(cosine_with_norms(a, na, b, nb))
}

/// Cosine similarity with precomputed nonzero norms. Bitwise identical to
/// [`cosine_similarity`] for the same inputs.
pub fn cosine_with_norms(a: &[f64], norm_a: f64, b: &[f64], norm_b: f64) -> f64 {
    (dot(a, b) / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// Pools the (optionally rescaled) vectors of a document's in-vocabulary
/// tokens. `scale` maps a vocabulary index to the factor applied to that
/// word's vector before pooling.
fn pool<F>(doc: &TokenizedDoc, emb: &EmbeddingMatrix, scale: F) -> Result<ThreadVector>
where
    F: Fn(usize) -> f64,
{
    let m = emb.dims();
    let mut sum = vec![0.0; m];
    let mut max = vec![f64::NEG_INFINITY; m];
    let mut count = 0usize;
    for tok in &doc.tokens {
        let Some(i) = emb.vocab().index_of(tok) else {
            continue;
        };
        let s = scale(i);
        for ((acc, hi), &x) in sum.iter_mut().zip(max.iter_mut()).zip(emb.vector(i)) {
            let v = s * x;
            *acc += v;
            if v > *hi {
                *hi = v;
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Unprojectable(doc.thread_id.clone()));
    }
    let n = count as f64;
    let mut full = sum;
    // Rounding in the sum can push a mean one ulp past the maximum.
    for (x, &hi) in full.iter_mut().zip(&max) {
        *x = (*x / n).min(hi);
    }
    full.extend(max);
    Ok(ThreadVector {
        full,
        in_vocab_count: count,
    })
}

/// Componentwise mean over in-vocabulary tokens, duplicates counted.
pub fn project_avg(doc: &TokenizedDoc, emb: &EmbeddingMatrix) -> Result<Vec<f64>> {
    project_thread(doc, emb).map(|tv| tv.avg().to_vec())
}

/// Componentwise maximum over in-vocabulary tokens.
pub fn project_max(doc: &TokenizedDoc, emb: &EmbeddingMatrix) -> Result<Vec<f64>> {
    project_thread(doc, emb).map(|tv| tv.max().to_vec())
}

pub fn project_thread(doc: &TokenizedDoc, emb: &EmbeddingMatrix) -> Result<ThreadVector> {
    pool(doc, emb, |_| 1.0)
}

/// Projection with every word vector `v_i` replaced by `weights[i] * v_i`.
pub fn project_weighted(
    doc: &TokenizedDoc,
    emb: &EmbeddingMatrix,
    weights: &[f64],
) -> Result<ThreadVector> {
    if weights.len() != emb.len() {
        return Err(Error::DimensionMismatch {
            expected: emb.len(),
            got: weights.len(),
        });
    }
    pool(doc, emb, |i| weights[i])
}

/// Projections for many documents; unprojectable documents come back as
/// `Err(Unprojectable)` in their slot.
pub fn project_all(docs: &[TokenizedDoc], emb: &EmbeddingMatrix) -> Vec<Result<ThreadVector>> {
    docs.par_iter().map(|d| project_thread(d, emb)).collect()
}

/// CSV dump: `thread_id,c1,...,c2m`.
pub fn write_projections<'a, W: Write>(
    mut out: W,
    rows: impl IntoIterator<Item = (&'a str, &'a ThreadVector)>,
) -> std::io::Result<()> {
    let mut header_done = false;
    for (id, tv) in rows {
        if !header_done {
            write!(out, "thread_id")?;
            for k in 1..=tv.full.len() {
                write!(out, ",c{k}")?;
            }
            writeln!(out)?;
            header_done = true;
        }
        write!(out, "{id}")?;
        for x in &tv.full {
            write!(out, ",{x}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[(&str, &[f64])]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows.iter().map(|(w, v)| (*w, v.to_vec()))).unwrap()
    }

    fn doc(tokens: &[&str]) -> TokenizedDoc {
        TokenizedDoc::from_tokens("t", tokens.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn avg_examples() {
        let e = emb(&[("a", &[0.5, -1.0]), ("x", &[1.0, 0.0]), ("y", &[0.0, 1.0])]);
        assert_eq!(project_avg(&doc(&["a"]), &e).unwrap(), vec![0.5, -1.0]);
        assert_eq!(project_avg(&doc(&["x", "y"]), &e).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(
            project_avg(&doc(&["oov"]), &e),
            Err(Error::Unprojectable(ref id)) if id == "t"
        ));
    }

    #[test]
    fn max_examples() {
        let e = emb(&[
            ("x", &[1.0, 0.0]),
            ("y", &[0.0, 1.0]),
            ("p", &[-2.0, -3.0]),
            ("q", &[-1.0, -5.0]),
        ]);
        assert_eq!(project_max(&doc(&["x", "y"]), &e).unwrap(), vec![1.0, 1.0]);
        assert_eq!(
            project_max(&doc(&["p", "q"]), &e).unwrap(),
            vec![-1.0, -3.0]
        );
        assert_eq!(project_max(&doc(&["p"]), &e).unwrap(), vec![-2.0, -3.0]);
        assert!(project_max(&doc(&[]), &e).is_err());
    }

    #[test]
    fn thread_projection_concatenates() {
        let e = emb(&[("x", &[1.0, 0.0]), ("y", &[0.0, 1.0])]);
        let tv = project_thread(&doc(&["x", "y", "oov"]), &e).unwrap();
        assert_eq!(tv.full, vec![0.5, 0.5, 1.0, 1.0]);
        assert_eq!(tv.in_vocab_count, 2);
        let tv = project_thread(&doc(&["y"]), &e).unwrap();
        assert_eq!(tv.full, vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn duplicates_count_in_average() {
        let e = emb(&[("x", &[1.0, 0.0]), ("y", &[0.0, 1.0])]);
        let tv = project_thread(&doc(&["x", "x", "x", "y"]), &e).unwrap();
        assert_eq!(tv.avg(), [0.75, 0.25]);
        assert_eq!(tv.in_vocab_count, 4);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 1.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm(_))
        ));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn weighted_projection_scales_before_pooling() {
        let e = emb(&[("x", &[1.0, -1.0]), ("y", &[-2.0, 4.0])]);
        let tv = project_weighted(&doc(&["x", "y"]), &e, &[0.5, 0.25]).unwrap();
        assert_eq!(tv.full, vec![0.0, 0.25, 0.5, 1.0]);
        assert!(project_weighted(&doc(&["x"]), &e, &[1.0]).is_err());
    }

    #[test]
    fn projection_csv() {
        let tv = ThreadVector {
            full: vec![0.5, 1.0],
            in_vocab_count: 1,
        };
        let mut buf = Vec::new();
        write_projections(&mut buf, [("t1", &tv)]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "thread_id,c1,c2\nt1,0.5,1\n"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vecs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
            (1usize..8).prop_flat_map(|n| {
                (
                    proptest::collection::vec(-10.0f64..10.0, n),
                    proptest::collection::vec(-10.0f64..10.0, n),
                )
            })
        }

        proptest! {
            #[test]
            fn cosine_symmetric_and_scale_invariant((a, b) in vecs()) {
                prop_assume!(norm(&a) > 1e-6 && norm(&b) > 1e-6);
                let ab = cosine_similarity(&a, &b).unwrap();
                let ba = cosine_similarity(&b, &a).unwrap();
                let a2: Vec<f64> = a.iter().map(|x| 2.0 * x).collect();
                prop_assert!((ab - ba).abs() <= 1e-12);
                prop_assert!((cosine_similarity(&a2, &b).unwrap() - ab).abs() <= 1e-12);
                prop_assert!((-1.0..=1.0).contains(&ab));
            }

            #[test]
            fn permutation_invariant_and_max_dominates(
                idx in proptest::collection::vec(0usize..4, 1..12),
                rot in 0usize..12,
            ) {
                let e = emb(&[
                    ("a", &[0.3, -1.0, 2.0]),
                    ("b", &[-0.7, 0.25, 0.0]),
                    ("c", &[1.5, 1.5, -1.0]),
                    ("d", &[0.0, -0.125, 0.5]),
                ]);
                let words = ["a", "b", "c", "d"];
                let toks: Vec<&str> = idx.iter().map(|&i| words[i]).collect();
                let mut rotated = toks.clone();
                let len = rotated.len();
                rotated.rotate_left(rot % len);
                rotated.reverse();
                let tv = project_thread(&doc(&toks), &e).unwrap();
                let tv2 = project_thread(&doc(&rotated), &e).unwrap();
                for (x, y) in tv.full.iter().zip(&tv2.full) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
                for (mx, av) in tv.max().iter().zip(tv.avg()) {
                    prop_assert!(mx >= av);
                }
            }
        }
    }
}
