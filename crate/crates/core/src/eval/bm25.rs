//! Okapi BM25 baseline over the shared tokenizer's terms.
//!
//! An index is a segment of documents; a query can be scored against several
//! disjoint segments at once (the training corpus plus a query's new
//! candidates), with collection statistics pooled across segments.

use std::collections::HashMap;

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::tokenizer::words;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
struct IndexedDoc {
    position: usize,
    doc_id: String,
    len: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    docs: Vec<IndexedDoc>,
    postings: HashMap<String, Vec<(u32, u32)>>,
    total_len: usize,
}

/// Text indexed for a document: title followed by body.
pub fn indexed_text(doc: &Document) -> String {
    format!("{}\n{}", doc.title, doc.text)
}

impl Bm25Index {
    pub fn build<S: AsRef<str>>(corpus: &Corpus, doc_ids: &[S]) -> Result<Self> {
        let mut index = Bm25Index::default();
        for id in doc_ids {
            let id = id.as_ref();
            let position = corpus
                .position(id)
                .ok_or_else(|| Error::UnknownDocId(id.to_string()))?;
            index.add(position, corpus.doc(position));
        }
        Ok(index)
    }

    fn add(&mut self, position: usize, doc: &Document) {
        let local = self.docs.len() as u32;
        let mut tf: HashMap<String, u32> = HashMap::new();
        let mut len = 0;
        for w in words(&indexed_text(doc)) {
            *tf.entry(w).or_default() += 1;
            len += 1;
        }
        for (term, count) in tf {
            self.postings.entry(term).or_default().push((local, count));
        }
        self.total_len += len;
        self.docs.push(IndexedDoc {
            position,
            doc_id: doc.doc_id.clone(),
            len,
        });
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.doc_id.as_str())
    }

    fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`
pub fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Scores every document of `segments` and returns the best `k` docids,
/// ties broken by canonical corpus order. Lists shorter than `k` are returned
/// when fewer documents are indexed.
pub fn bm25_retrieve(
    segments: &[&Bm25Index],
    query: &str,
    k: usize,
    params: Bm25Params,
) -> Vec<String> {
    bm25_scores(segments, query, params)
        .into_iter()
        .take(k)
        .map(|(id, _)| id)
        .collect()
}

/// All indexed documents with their scores, best first.
pub fn bm25_scores(segments: &[&Bm25Index], query: &str, params: Bm25Params) -> Vec<(String, f64)> {
    let n_docs: usize = segments.iter().map(|s| s.len()).sum();
    if n_docs == 0 {
        return Vec::new();
    }
    let avgdl = segments.iter().map(|s| s.total_len).sum::<usize>() as f64 / n_docs as f64;
    let terms: Vec<String> = words(query).collect();
    let mut scores: Vec<Vec<f64>> = segments.iter().map(|s| vec![0.0; s.len()]).collect();
    for term in &terms {
        let df: usize = segments.iter().map(|s| s.df(term)).sum();
        if df == 0 {
            continue;
        }
        let idf = bm25_idf(n_docs, df);
        for (seg, acc) in segments.iter().zip(scores.iter_mut()) {
            let Some(list) = seg.postings.get(term) else {
                continue;
            };
            for &(local, tf) in list {
                let tf = f64::from(tf);
                let dl = seg.docs[local as usize].len as f64;
                let denom = tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl);
                acc[local as usize] += idf * tf * (params.k1 + 1.0) / denom;
            }
        }
    }
    let mut ranked: Vec<(f64, usize, &str)> = segments
        .iter()
        .zip(&scores)
        .flat_map(|(seg, acc)| {
            seg.docs
                .iter()
                .zip(acc)
                .map(|(d, &s)| (s, d.position, d.doc_id.as_str()))
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked
        .into_iter()
        .map(|(s, _, id)| (id.to_string(), s))
        .collect()
}
