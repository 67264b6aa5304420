//! Documents, queries and the train/new corpus partition.
//!
//! Corpora and query sets are read from JSONL, one object per line. Line order
//! is the canonical document order used for every tie-break downstream.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::token_count;

/// Token budget for precomputed compressed text and for the truncation
/// fallback used when rendering candidates.
pub const COMPRESSED_TOKEN_LIMIT: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub compressed_text: Option<String>,
}

impl Document {
    /// Title-as-docid document.
    pub fn new(title: impl Into<String>, text: impl Into<String>) -> Self {
        let title = title.into();
        Document {
            doc_id: title.clone(),
            title,
            text: text.into(),
            compressed_text: None,
        }
    }

    pub fn with_compressed(mut self, compressed: impl Into<String>) -> Self {
        self.compressed_text = Some(compressed.into());
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("empty doc id".into());
        }
        if self.doc_id != self.title {
            return Err(format!(
                "id {:?} differs from title {:?} (docids are titles)",
                self.doc_id, self.title
            ));
        }
        if let Some(c) = &self.compressed_text {
            let n = token_count(c);
            if n > COMPRESSED_TOKEN_LIMIT {
                return Err(format!(
                    "compressed text has {n} tokens, limit is {COMPRESSED_TOKEN_LIMIT}"
                ));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct DocumentLine {
    id: Option<String>,
    title: Option<String>,
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    compressed: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            doc.validate().map_err(|message| Error::Parse {
                path: "<memory>".into(),
                line: i + 1,
                message,
            })?;
            if let Some(&first) = index.get(&doc.doc_id) {
                return Err(Error::DuplicateDocId {
                    doc_id: doc.doc_id.clone(),
                    line: i + 1,
                    first_line: first + 1,
                });
            }
            index.insert(doc.doc_id.clone(), i);
        }
        Ok(Corpus { docs, index })
    }

    pub fn from_reader<R: BufRead>(reader: R, label: &Path) -> Result<Self> {
        let mut docs = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut first_line: Vec<usize> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|source| Error::Io {
                path: label.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: label.to_path_buf(),
                line: lineno,
                message,
            };
            let raw: DocumentLine =
                serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            let field = |v: Option<String>, name: &str| {
                v.ok_or_else(|| parse_err(format!("missing required field {name:?}")))
            };
            let doc = Document {
                doc_id: field(raw.id, "id")?,
                title: field(raw.title, "title")?,
                text: field(raw.text, "text")?,
                compressed_text: raw.compressed,
            };
            doc.validate().map_err(parse_err)?;
            if let Some(&prev) = index.get(&doc.doc_id) {
                return Err(Error::DuplicateDocId {
                    doc_id: doc.doc_id,
                    line: lineno,
                    first_line: first_line[prev],
                });
            }
            index.insert(doc.doc_id.clone(), docs.len());
            first_line.push(lineno);
            docs.push(doc);
        }
        Ok(Corpus { docs, index })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.index.get(doc_id).map(|&i| &self.docs[i])
    }

    /// Canonical position of a document.
    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.index.get(doc_id).copied()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.index.contains_key(doc_id)
    }

    pub fn doc(&self, position: usize) -> &Document {
        &self.docs[position]
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for d in &self.docs {
            let line = DocumentLine {
                id: Some(d.doc_id.clone()),
                title: Some(d.title.clone()),
                text: Some(d.text.clone()),
                compressed: d.compressed_text.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn ingest_corpus(path: &Path) -> Result<Corpus> {
    Corpus::from_reader(open(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(rename = "qid")]
    pub query_id: String,
    pub text: String,
    #[serde(rename = "gold")]
    pub gold_doc_id: String,
}

impl QueryRecord {
    pub fn new(
        query_id: impl Into<String>,
        text: impl Into<String>,
        gold: impl Into<String>,
    ) -> Self {
        QueryRecord {
            query_id: query_id.into(),
            text: text.into(),
            gold_doc_id: gold.into(),
        }
    }
}

pub fn read_queries<R: BufRead>(
    reader: R,
    label: &Path,
    corpus: &Corpus,
) -> Result<Vec<QueryRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: label.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let q: QueryRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: label.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(q);
    }
    check_gold(&out, corpus)?;
    Ok(out)
}

pub fn load_queries(path: &Path, corpus: &Corpus) -> Result<Vec<QueryRecord>> {
    read_queries(open(path)?, path, corpus)
}

fn check_gold(queries: &[QueryRecord], corpus: &Corpus) -> Result<()> {
    let missing: Vec<String> = queries
        .iter()
        .filter(|q| !corpus.contains(&q.gold_doc_id))
        .map(|q| q.query_id.clone())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::UnresolvedGold { query_ids: missing })
    }
}

pub fn write_queries<W: Write>(queries: &[QueryRecord], mut w: W) -> std::io::Result<()> {
    for q in queries {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Partition of the corpus into the training corpus and newly arriving
/// documents. Both id lists are kept in canonical corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub seed: u64,
    pub ratio: f64,
    train_ids: Vec<String>,
    new_ids: Vec<String>,
    new_set: HashSet<String>,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    ratio: f64,
    new_ids: Vec<String>,
}

impl CorpusSplit {
    fn from_new_set(corpus: &Corpus, seed: u64, ratio: f64, new_set: HashSet<String>) -> Self {
        let (new_ids, train_ids) = corpus
            .documents()
            .iter()
            .map(|d| d.doc_id.clone())
            .partition(|id| new_set.contains(id));
        CorpusSplit {
            seed,
            ratio,
            train_ids,
            new_ids,
            new_set,
        }
    }

    pub fn train_ids(&self) -> &[String] {
        &self.train_ids
    }

    pub fn new_ids(&self) -> &[String] {
        &self.new_ids
    }

    pub fn is_new(&self, doc_id: &str) -> bool {
        self.new_set.contains(doc_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SplitFile {
            seed: self.seed,
            ratio: self.ratio,
            new_ids: self.new_ids.clone(),
        })
        .expect("split serializes")
    }

    pub fn from_json(s: &str, corpus: &Corpus) -> Result<Self> {
        let raw: SplitFile =
            serde_json::from_str(s).map_err(|e| Error::invalid(format!("split file: {e}")))?;
        let mut set = HashSet::with_capacity(raw.new_ids.len());
        for id in raw.new_ids {
            if !corpus.contains(&id) {
                return Err(Error::UnknownDocId(id));
            }
            if !set.insert(id.clone()) {
                return Err(Error::invalid(format!("split file lists {id:?} twice")));
            }
        }
        Ok(Self::from_new_set(corpus, raw.seed, raw.ratio, set))
    }

    pub fn load(path: &Path, corpus: &Corpus) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s, corpus)
    }
}

/// Seeded uniform shuffle of the canonical order, then a prefix cut of
/// `round(new_ratio * |corpus|)` documents for the new split.
pub fn split_corpus(corpus: &Corpus, new_ratio: f64, seed: u64) -> Result<CorpusSplit> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if !(new_ratio > 0.0 && new_ratio < 1.0) {
        return Err(Error::invalid(format!(
            "split ratio must lie in (0, 1), got {new_ratio}"
        )));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_new = (new_ratio * corpus.len() as f64).round() as usize;
    let new_set = order[..n_new]
        .iter()
        .map(|&i| corpus.doc(i).doc_id.clone())
        .collect();
    Ok(CorpusSplit::from_new_set(corpus, seed, new_ratio, new_set))
}

/// Returns `(retention, adaptation)`: queries whose gold lies in the training
/// corpus, and queries whose gold is a new document.
pub fn split_queries(
    queries: &[QueryRecord],
    split: &CorpusSplit,
    corpus: &Corpus,
) -> Result<(Vec<QueryRecord>, Vec<QueryRecord>)> {
    check_gold(queries, corpus)?;
    Ok(queries
        .iter()
        .cloned()
        .partition(|q| !split.is_new(&q.gold_doc_id)))
}
