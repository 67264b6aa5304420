//! Deterministic synthetic corpora for tests, demos and the bundled dataset.
//!
//! Every document belongs to a topic, shares that topic's vocabulary with its
//! neighbours and owns a handful of private words that no other document
//! uses. Queries quote private words of their gold document, so lexical
//! similarity singles the gold out while same-topic documents make natural
//! hard negatives.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, QueryRecord};
use crate::error::{Error, Result};
use crate::seed::rng_for;

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "kr", "st",
    "tr", "vel",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const TOPIC_WORDS_PER_TOPIC: usize = 24;
const PRIVATE_WORDS_PER_DOC: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub n_topics: usize,
    pub queries_per_doc: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_docs: 1000,
            n_topics: 20,
            queries_per_doc: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub corpus: Corpus,
    pub queries: Vec<QueryRecord>,
}

struct WordMint {
    rng: ChaCha8Rng,
    seen: HashSet<String>,
}

impl WordMint {
    fn fresh(&mut self) -> String {
        loop {
            let syllables = self.rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).unwrap());
                w.push_str(NUCLEI.choose(&mut self.rng).unwrap());
            }
            if self.rng.random_bool(0.3) {
                w.push(['n', 'r', 'l', 's', 'x'][self.rng.random_range(0..5)]);
            }
            if self.seen.insert(w.clone()) {
                return w;
            }
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

/// `n` distinct random words, usable as a pool of non-inserted strings.
pub fn random_words(n: usize, seed: u64) -> Vec<String> {
    let mut mint = WordMint {
        rng: rng_for(seed, &["random-words"]),
        seen: HashSet::new(),
    };
    (0..n).map(|_| mint.fresh()).collect()
}

/// Generates a corpus and its queries; identical configs give identical data.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthData> {
    if cfg.n_docs == 0 || cfg.n_topics == 0 {
        return Err(Error::invalid(
            "synthetic corpus needs at least one document and topic",
        ));
    }
    let mut mint = WordMint {
        rng: rng_for(cfg.seed, &["synth-words"]),
        seen: HashSet::new(),
    };
    let topics: Vec<(String, Vec<String>)> = (0..cfg.n_topics)
        .map(|_| {
            let name = mint.fresh();
            let words = (0..TOPIC_WORDS_PER_TOPIC).map(|_| mint.fresh()).collect();
            (name, words)
        })
        .collect();

    let mut docs = Vec::with_capacity(cfg.n_docs);
    let mut private = Vec::with_capacity(cfg.n_docs);
    let mut rng = rng_for(cfg.seed, &["synth-docs"]);
    for i in 0..cfg.n_docs {
        let (topic, topic_words) = &topics[i % cfg.n_topics];
        let title = format!(
            "{} {}",
            capitalize(&mint.fresh()),
            capitalize(&mint.fresh())
        );
        let own: Vec<String> = (0..PRIVATE_WORDS_PER_DOC).map(|_| mint.fresh()).collect();
        let shared: Vec<&String> = topic_words.choose_multiple(&mut rng, 6).collect();
        let text = format!(
            "{title} is a {topic} record. It describes {} and {} together with {}, {} and {}. \
             Observers link {} to {} while {} and {} remain under study. \
             Later notes mention {}, {}, {} and {} in the {topic} literature.",
            own[0],
            own[1],
            shared[0],
            shared[1],
            own[2],
            own[3],
            shared[2],
            own[4],
            shared[3],
            own[5],
            shared[4],
            shared[5],
            own[6],
        );
        let mut doc = Document::new(title.clone(), text);
        if i % 2 == 0 {
            doc = doc.with_compressed(format!(
                "{title}: {topic} record on {}, {}, {} and {}.",
                own[0], own[1], own[2], own[3]
            ));
        }
        docs.push(doc);
        private.push((own, topic.clone()));
    }
    let corpus = Corpus::from_documents(docs)?;

    let mut qrng = rng_for(cfg.seed, &["synth-queries"]);
    let mut queries = Vec::with_capacity(cfg.n_docs * cfg.queries_per_doc);
    for (i, (own, topic)) in private.iter().enumerate() {
        // the compressed view only covers the first four private words
        let mut visible: Vec<&String> = own[..4].iter().collect();
        for j in 0..cfg.queries_per_doc {
            visible.shuffle(&mut qrng);
            let text = format!(
                "which {topic} record mentions {}, {} and {}?",
                visible[0], visible[1], visible[2]
            );
            queries.push(QueryRecord::new(
                format!("q{i:05}-{j}"),
                text,
                corpus.doc(i).doc_id.clone(),
            ));
        }
    }
    Ok(SynthData { corpus, queries })
}
