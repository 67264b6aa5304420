//! TF-IDF cosine similarity, the default backend for hard-negative mining and
//! for the mock model's lexical matching.
//!
//! Term frequencies are raw counts; inverse document frequency uses the
//! smoothed form `ln((1 + n) / (1 + df)) + 1`, so every term (including terms
//! never seen while fitting) carries positive weight.

use std::collections::HashMap;

use crate::seed::derive_seed;
use crate::tokenizer::words;

/// Pluggable text-similarity backend. Embeddings are computed once per text
/// and compared pairwise.
pub trait SimilarityBackend: Sync {
    type Embedding: Send + Sync;

    fn embed(&self, text: &str) -> Self::Embedding;

    fn similarity(&self, a: &Self::Embedding, b: &Self::Embedding) -> f64;
}

/// Sparse L2-normalized tf-idf vector keyed by a 64-bit term hash, sorted by
/// key.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector {
    entries: Vec<(u64, f64)>,
}

impl SparseVector {
    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.entries, &other.entries);
        let mut acc = 0.0;
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

fn term_key(term: &str) -> u64 {
    derive_seed(0, &[term])
}

#[derive(Debug, Clone, Default)]
pub struct TfIdfModel {
    n_docs: usize,
    df: HashMap<String, usize>,
}

impl TfIdfModel {
    pub fn fit<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut df: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0;
        for text in texts {
            n_docs += 1;
            let mut seen: Vec<String> = words(text).collect();
            seen.sort_unstable();
            seen.dedup();
            for w in seen {
                *df.entry(w).or_default() += 1;
            }
        }
        TfIdfModel { n_docs, df }
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + self.n_docs as f64) / (1.0 + df)).ln() + 1.0
    }

    pub fn vectorize(&self, text: &str) -> SparseVector {
        let mut tf: HashMap<String, f64> = HashMap::new();
        for w in words(text) {
            *tf.entry(w).or_default() += 1.0;
        }
        let mut entries: Vec<(u64, f64)> = tf
            .into_iter()
            .map(|(w, c)| (term_key(&w), c * self.idf(&w)))
            .collect();
        // sorted before summing so the norm does not depend on hash order
        entries.sort_unstable_by_key(|e| e.0);
        let norm = entries.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return SparseVector::default();
        }
        for e in &mut entries {
            e.1 /= norm;
        }
        SparseVector { entries }
    }

    /// Cosine similarity of the tf-idf vectors of `a` and `b`, in `[0, 1]`.
    pub fn lexical_similarity(&self, a: &str, b: &str) -> f64 {
        self.similarity(&self.vectorize(a), &self.vectorize(b))
    }
}

impl SimilarityBackend for TfIdfModel {
    type Embedding = SparseVector;

    fn embed(&self, text: &str) -> SparseVector {
        self.vectorize(text)
    }

    fn similarity(&self, a: &SparseVector, b: &SparseVector) -> f64 {
        if a.is_zero() || b.is_zero() {
            return 0.0;
        }
        a.dot(b).clamp(0.0, 1.0)
    }
}
