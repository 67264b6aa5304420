#![allow(dead_code)]

use icl_gr::corpus::{split_corpus, split_queries, Corpus, CorpusSplit, QueryRecord};
use icl_gr::scorer::{fit_training_tfidf, MockModel, MockModelConfig};
use icl_gr::similarity::TfIdfModel;
use icl_gr::synth::{synth_dataset, SynthConfig};
use icl_gr::tokenizer::{build_vocab, Vocabulary};

pub struct Fixture {
    pub corpus: Corpus,
    pub queries: Vec<QueryRecord>,
    pub split: CorpusSplit,
    pub vocab: Vocabulary,
    pub tfidf: TfIdfModel,
    pub retention: Vec<QueryRecord>,
    pub adaptation: Vec<QueryRecord>,
}

pub fn fixture(n_docs: usize, queries_per_doc: usize, seed: u64) -> Fixture {
    let data = synth_dataset(&SynthConfig {
        n_docs,
        n_topics: (n_docs / 20).clamp(1, 20),
        queries_per_doc,
        seed,
    })
    .unwrap();
    let split = split_corpus(&data.corpus, 0.1, 7).unwrap();
    let vocab = build_vocab(&data.corpus, &data.queries).unwrap();
    let (retention, adaptation) = split_queries(&data.queries, &split, &data.corpus).unwrap();
    let tfidf = fit_training_tfidf(&data.corpus, &split);
    Fixture {
        corpus: data.corpus,
        queries: data.queries,
        split,
        vocab,
        tfidf,
        retention,
        adaptation,
    }
}

impl Fixture {
    pub fn mock(&self, cfg: MockModelConfig) -> MockModel {
        MockModel::for_split(cfg, &self.corpus, &self.split, self.vocab.clone()).unwrap()
    }
}

/// Pearson chi-square statistic against a uniform expectation.
pub fn chi_square_uniform(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum()
}
