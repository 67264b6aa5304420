//! Autoregressive token scoring.
//!
//! [`TokenScorer`] is the contract the decoder and the loss functions work
//! against: given a prompt and the tokens generated so far it yields a full
//! log-probability vector over the vocabulary. A scorer opens a
//! [`ScoringSession`] per prompt so implementations can precompute
//! prompt-level state once.
//!
//! Two implementations ship here. [`UniformScorer`] is the analytic baseline.
//! [`MockModel`] is a deterministic stand-in for a trained retriever: its
//! routing confidence and candidate preferences are closed-form functions of
//! tf-idf similarity, so every downstream metric can be checked analytically.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusSplit};
use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::seed::rng_for;
use crate::similarity::{SimilarityBackend, SparseVector, TfIdfModel};
use crate::tokenizer::{TokenId, TokenSeq, Vocabulary, COPY_ID};

/// Probability given to tokens off every supported path before
/// renormalization.
pub const OFF_PATH_FLOOR: f64 = 1e-12;

/// Slope of the routing logistic in the similarity gap.
pub const ROUTE_SCALE: f64 = 5.0;

pub trait ScoringSession {
    /// Log-probabilities of the next token, one entry per vocabulary id.
    fn next_logprobs(&self, generated: &[TokenId]) -> Vec<f64>;
}

pub trait TokenScorer: Sync {
    fn vocab_size(&self) -> usize;

    fn session<'a>(&'a self, prompt: &'a Prompt) -> Box<dyn ScoringSession + 'a>;
}

/// Same distribution at every step: `-ln V` for each token.
#[derive(Debug, Clone, Copy)]
pub struct UniformScorer {
    pub vocab_size: usize,
}

struct UniformSession(usize);

impl ScoringSession for UniformSession {
    fn next_logprobs(&self, _generated: &[TokenId]) -> Vec<f64> {
        vec![-(self.0 as f64).ln(); self.0]
    }
}

impl TokenScorer for UniformScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn session<'a>(&'a self, _prompt: &'a Prompt) -> Box<dyn ScoringSession + 'a> {
        Box::new(UniformSession(self.vocab_size))
    }
}

/// `-sum_t log p(target_t | prompt, prefix ++ target_<t)`.
pub fn continuation_nll(
    scorer: &dyn TokenScorer,
    prompt: &Prompt,
    prefix: &[TokenId],
    target: &[TokenId],
) -> Result<f64> {
    if target.is_empty() {
        return Err(Error::Empty("target sequence"));
    }
    let session = scorer.session(prompt);
    let mut generated = prefix.to_vec();
    let mut nll = 0.0;
    for &tok in target {
        let lp = session.next_logprobs(&generated);
        let v = lp
            .get(tok as usize)
            .ok_or_else(|| Error::invalid(format!("token {tok} outside the vocabulary")))?;
        nll -= v;
        generated.push(tok);
    }
    Ok(nll)
}

/// Negative log-likelihood of `target` under `scorer` given `prompt`.
pub fn sequence_nll(scorer: &dyn TokenScorer, prompt: &Prompt, target: &[TokenId]) -> Result<f64> {
    continuation_nll(scorer, prompt, &[], target)
}

/// Stand-in for what a retriever trained on the training corpus remembers:
/// each training document's docid path and its tf-idf profile.
#[derive(Debug, Clone)]
pub struct ParametricMemory {
    doc_ids: Vec<String>,
    paths: Vec<TokenSeq>,
    profiles: Vec<SparseVector>,
}

impl ParametricMemory {
    pub fn build<S: AsRef<str>>(
        corpus: &Corpus,
        train_ids: &[S],
        vocab: &Vocabulary,
        tfidf: &TfIdfModel,
    ) -> Result<Self> {
        let mut doc_ids = Vec::with_capacity(train_ids.len());
        let mut paths = Vec::with_capacity(train_ids.len());
        let mut profiles = Vec::with_capacity(train_ids.len());
        for id in train_ids {
            let doc = corpus
                .get(id.as_ref())
                .ok_or_else(|| Error::UnknownDocId(id.as_ref().to_string()))?;
            doc_ids.push(doc.doc_id.clone());
            paths.push(vocab.encode_docid(&doc.doc_id));
            profiles.push(tfidf.embed(&memory_text(&doc.title, &doc.text)));
        }
        Ok(ParametricMemory {
            doc_ids,
            paths,
            profiles,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn covers(&self, doc_id: &str) -> bool {
        self.doc_ids.iter().any(|d| d == doc_id)
    }
}

fn memory_text(title: &str, body: &str) -> String {
    format!("{title}\n{body}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockModelConfig {
    /// Softmax temperature over candidate (and memory) similarities.
    pub copy_temperature: f64,
    /// Added to the routing logit.
    pub route_bias: f64,
    /// Enables Gaussian similarity noise when set.
    pub noise_seed: Option<u64>,
    /// Standard deviation of the similarity noise.
    pub noise_scale: f64,
    /// Use gold labels as similarities (1 for the gold document, 0 otherwise).
    pub oracle: bool,
}

impl Default for MockModelConfig {
    fn default() -> Self {
        MockModelConfig {
            copy_temperature: 0.05,
            route_bias: 0.0,
            noise_seed: None,
            noise_scale: 0.05,
            oracle: false,
        }
    }
}

impl MockModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.copy_temperature > 0.0 && self.copy_temperature.is_finite()) {
            return Err(Error::invalid(
                "copy_temperature must be positive and finite",
            ));
        }
        if !self.route_bias.is_finite() {
            return Err(Error::invalid("route_bias must be finite"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise_scale must be non-negative"));
        }
        Ok(())
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `P([COPY])` at the first step for a best in-context similarity
/// `context_sim` and best memory similarity `memory_sim`.
pub fn copy_probability(route_bias: f64, context_sim: f64, memory_sim: f64) -> f64 {
    logistic(route_bias + ROUTE_SCALE * (context_sim - memory_sim))
}

fn softmax_weights(sims: &[f64], temperature: f64) -> Vec<f64> {
    let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Deterministic lexical mock of a context-routed generative retriever.
/// TF-IDF statistics over the bodies of the training documents.
pub fn fit_training_tfidf(corpus: &Corpus, split: &CorpusSplit) -> TfIdfModel {
    TfIdfModel::fit(
        split
            .train_ids()
            .iter()
            .filter_map(|id| corpus.get(id))
            .map(|d| d.text.as_str()),
    )
}

pub struct MockModel {
    cfg: MockModelConfig,
    vocab: Vocabulary,
    tfidf: TfIdfModel,
    memory: ParametricMemory,
}

impl MockModel {
    pub fn new(
        cfg: MockModelConfig,
        vocab: Vocabulary,
        tfidf: TfIdfModel,
        memory: ParametricMemory,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(MockModel {
            cfg,
            vocab,
            tfidf,
            memory,
        })
    }

    /// Mock fitted on a split: tf-idf over training texts, memory of the
    /// training documents.
    pub fn for_split(
        cfg: MockModelConfig,
        corpus: &Corpus,
        split: &CorpusSplit,
        vocab: Vocabulary,
    ) -> Result<Self> {
        let tfidf = fit_training_tfidf(corpus, split);
        let memory = ParametricMemory::build(corpus, split.train_ids(), &vocab, &tfidf)?;
        MockModel::new(cfg, vocab, tfidf, memory)
    }

    pub fn config(&self) -> &MockModelConfig {
        &self.cfg
    }

    pub fn memory(&self) -> &ParametricMemory {
        &self.memory
    }

    fn noise(&self, query_id: &str, doc_id: &str) -> f64 {
        match self.cfg.noise_seed {
            Some(seed) if self.cfg.noise_scale > 0.0 => {
                let z: f64 = StandardNormal.sample(&mut rng_for(seed, &[query_id, doc_id]));
                self.cfg.noise_scale * z
            }
            _ => 0.0,
        }
    }

    /// Similarities of the prompt's query to each candidate and to each memory
    /// entry, noise included.
    pub fn similarities(&self, prompt: &Prompt) -> (Vec<f64>, Vec<f64>) {
        let q = &prompt.instance.query;
        let query_vec = self.tfidf.embed(&q.text);
        let score = |doc_id: &str, lexical: &dyn Fn() -> f64| {
            let base = if self.cfg.oracle {
                if doc_id == q.gold_doc_id {
                    1.0
                } else {
                    0.0
                }
            } else {
                lexical()
            };
            base + self.noise(&q.query_id, doc_id)
        };
        let cand = prompt
            .instance
            .candidates
            .iter()
            .map(|c| {
                score(&c.doc_id, &|| {
                    let v = self.tfidf.embed(&memory_text(&c.doc_id, &c.display_text));
                    self.tfidf.similarity(&query_vec, &v)
                })
            })
            .collect();
        let mem = self
            .memory
            .doc_ids
            .iter()
            .zip(&self.memory.profiles)
            .map(|(id, p)| score(id, &|| self.tfidf.similarity(&query_vec, p)))
            .collect();
        (cand, mem)
    }
}

struct MockSession<'a> {
    vocab_size: usize,
    copy_prob: f64,
    candidate_paths: Vec<TokenSeq>,
    candidate_weights: Vec<f64>,
    memory_paths: &'a [TokenSeq],
    memory_weights: Vec<f64>,
}

impl MockSession<'_> {
    fn emit(&self, on_path: &mut Vec<(TokenId, f64)>) -> Vec<f64> {
        on_path.sort_unstable_by_key(|e| e.0);
        on_path.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        on_path.retain(|e| e.1 > 0.0);
        let mass: f64 = on_path.iter().map(|e| e.1).sum();
        let off = (self.vocab_size - on_path.len()) as f64;
        let z = mass + OFF_PATH_FLOOR * off;
        let mut out = vec![(OFF_PATH_FLOOR / z).ln(); self.vocab_size];
        for &(t, p) in on_path.iter() {
            out[t as usize] = (p / z).ln();
        }
        out
    }

    fn path_mass(
        paths: &[TokenSeq],
        weights: &[f64],
        prefix: &[TokenId],
        scale: f64,
        out: &mut Vec<(TokenId, f64)>,
    ) {
        let mut total = 0.0;
        let start = out.len();
        for (path, &w) in paths.iter().zip(weights) {
            if path.len() > prefix.len() && path.starts_with(prefix) {
                out.push((path[prefix.len()], w));
                total += w;
            }
        }
        if total > 0.0 {
            for e in &mut out[start..] {
                e.1 = scale * e.1 / total;
            }
        }
    }
}

impl ScoringSession for MockSession<'_> {
    fn next_logprobs(&self, generated: &[TokenId]) -> Vec<f64> {
        let mut on_path = Vec::new();
        match generated.split_first() {
            None => {
                on_path.push((COPY_ID, self.copy_prob));
                Self::path_mass(
                    self.memory_paths,
                    &self.memory_weights,
                    &[],
                    1.0 - self.copy_prob,
                    &mut on_path,
                );
            }
            Some((&COPY_ID, rest)) => {
                Self::path_mass(
                    &self.candidate_paths,
                    &self.candidate_weights,
                    rest,
                    1.0,
                    &mut on_path,
                );
            }
            Some(_) => {
                Self::path_mass(
                    self.memory_paths,
                    &self.memory_weights,
                    generated,
                    1.0,
                    &mut on_path,
                );
            }
        }
        self.emit(&mut on_path)
    }
}

impl TokenScorer for MockModel {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn session<'a>(&'a self, prompt: &'a Prompt) -> Box<dyn ScoringSession + 'a> {
        let (cand_sims, mem_sims) = self.similarities(prompt);
        let best = |xs: &[f64]| xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let context_sim = if cand_sims.is_empty() {
            0.0
        } else {
            best(&cand_sims)
        };
        let memory_sim = if mem_sims.is_empty() {
            0.0
        } else {
            best(&mem_sims)
        };
        let t = self.cfg.copy_temperature;
        Box::new(MockSession {
            vocab_size: self.vocab.len(),
            copy_prob: copy_probability(self.cfg.route_bias, context_sim, memory_sim),
            candidate_paths: prompt
                .instance
                .candidates
                .iter()
                .map(|c| self.vocab.encode_docid(&c.doc_id))
                .collect(),
            candidate_weights: softmax_weights(&cand_sims, t),
            memory_paths: &self.memory.paths,
            memory_weights: softmax_weights(&mem_sims, t),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, QueryRecord};
    use crate::prompt::InstanceFactory;
    use crate::tokenizer::build_vocab;

    fn logsumexp(xs: &[f64]) -> f64 {
        let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    }

    struct World {
        corpus: Corpus,
        vocab: Vocabulary,
        tfidf: TfIdfModel,
    }

    fn world() -> World {
        let corpus = Corpus::from_documents(vec![
            Document::new("Red Apple", "orchard fruit harvest autumn"),
            Document::new("Blue Ocean", "waves salt water tide"),
            Document::new("Green Forest", "trees moss canopy"),
            Document::new("Yellow Sun", "star light heat"),
            Document::new("Silver Moon", "lunar crater night"),
        ])
        .unwrap();
        let vocab = build_vocab(&corpus, &[]).unwrap();
        let tfidf = TfIdfModel::fit(corpus.documents().iter().map(|d| d.text.as_str()));
        World {
            corpus,
            vocab,
            tfidf,
        }
    }

    fn mock(w: &World, train: &[&str], cfg: MockModelConfig) -> MockModel {
        let memory = ParametricMemory::build(&w.corpus, train, &w.vocab, &w.tfidf).unwrap();
        MockModel::new(cfg, w.vocab.clone(), w.tfidf.clone(), memory).unwrap()
    }

    fn prompt(w: &World, query: &QueryRecord, cands: &[&str]) -> Prompt {
        let ids: Vec<String> = cands.iter().map(|s| s.to_string()).collect();
        let inst = InstanceFactory::new(&w.corpus, &w.vocab)
            .with_candidates(query, &ids, 0)
            .unwrap();
        Prompt::new(&w.vocab, inst)
    }

    #[test]
    fn gold_match_without_memory_match_routes_to_copy() {
        let w = world();
        let m = mock(
            &w,
            &["Blue Ocean", "Green Forest"],
            MockModelConfig::default(),
        );
        let q = QueryRecord::new("q", "Red Apple orchard fruit harvest autumn", "Red Apple");
        let p = prompt(&w, &q, &["Red Apple", "Yellow Sun"]);
        let lp = m.session(&p).next_logprobs(&[]);
        let p_copy = lp[COPY_ID as usize].exp();
        // c = 1, m = 0, bias 0 -> logistic(5)
        assert!((p_copy - logistic(5.0)).abs() < 1e-9, "{p_copy}");
        assert!(p_copy > 0.99);
    }

    #[test]
    fn noise_context_with_memory_match_stays_parametric() {
        let w = world();
        let m = mock(
            &w,
            &["Blue Ocean", "Green Forest"],
            MockModelConfig::default(),
        );
        let q = QueryRecord::new("q", "Blue Ocean waves salt water tide", "Blue Ocean");
        let p = prompt(&w, &q, &["Yellow Sun", "Silver Moon"]);
        let lp = m.session(&p).next_logprobs(&[]);
        let p_copy = lp[COPY_ID as usize].exp();
        assert!((p_copy - logistic(-5.0)).abs() < 1e-9);
        assert!(p_copy < 0.5);
    }

    #[test]
    fn every_step_is_normalized() {
        let w = world();
        let m = mock(
            &w,
            &["Blue Ocean", "Green Forest", "Yellow Sun"],
            MockModelConfig::default(),
        );
        let q = QueryRecord::new("q", "ocean tide light", "Blue Ocean");
        let p = prompt(&w, &q, &["Red Apple", "Silver Moon", "Blue Ocean"]);
        let s = m.session(&p);
        let copy_path = {
            let mut v = vec![COPY_ID];
            v.extend(w.vocab.encode_docid("Silver Moon").0);
            v
        };
        let param_path = w.vocab.encode_docid("Green Forest").0;
        for path in [&copy_path, &param_path] {
            for t in 0..=path.len() {
                let lp = s.next_logprobs(&path[..t]);
                assert_eq!(lp.len(), w.vocab.len());
                assert!(logsumexp(&lp).abs() < 1e-9);
            }
        }
        // unreachable prefix: all floor, still normalized
        let lp = s.next_logprobs(&[w.vocab.id("moss").unwrap()]);
        assert!(logsumexp(&lp).abs() < 1e-9);
    }

    #[test]
    fn copy_probability_monotone_in_gold_similarity() {
        let mut last = 0.0;
        for i in 0..=20 {
            let c = i as f64 / 20.0;
            let p = copy_probability(0.3, c, 0.4);
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn oracle_similarities() {
        let w = world();
        let cfg = MockModelConfig {
            oracle: true,
            ..Default::default()
        };
        let m = mock(&w, &["Blue Ocean"], cfg);
        let q = QueryRecord::new("q", "nothing in common", "Red Apple");
        let p = prompt(&w, &q, &["Red Apple", "Yellow Sun"]);
        let (c, mem) = m.similarities(&p);
        assert_eq!(c, vec![1.0, 0.0]);
        assert_eq!(mem, vec![0.0]);
    }

    #[test]
    fn noise_is_seeded_and_per_pair() {
        let w = world();
        let cfg = |seed| MockModelConfig {
            noise_seed: Some(seed),
            noise_scale: 0.1,
            ..Default::default()
        };
        let q = QueryRecord::new("q", "ocean", "Blue Ocean");
        let p = prompt(&w, &q, &["Red Apple", "Silver Moon"]);
        let a = mock(&w, &["Blue Ocean"], cfg(1)).similarities(&p);
        let b = mock(&w, &["Blue Ocean"], cfg(1)).similarities(&p);
        let c = mock(&w, &["Blue Ocean"], cfg(2)).similarities(&p);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_nll_is_length_times_log_v() {
        let w = world();
        let q = QueryRecord::new("q", "x", "Red Apple");
        let p = prompt(&w, &q, &["Red Apple"]);
        let u = UniformScorer { vocab_size: 50 };
        let nll = sequence_nll(&u, &p, &[3, 4, 5, 1]).unwrap();
        assert!((nll - 4.0 * 50f64.ln()).abs() < 1e-12);
        assert!(sequence_nll(&u, &p, &[]).is_err());
    }

    #[test]
    fn config_rejects_nonpositive_temperature() {
        let cfg = MockModelConfig {
            copy_temperature: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
