//! In-context instance construction: hard negatives, candidate lists with the
//! gold inserted (or withheld), supervision targets and the rendered prompt.

use std::collections::{HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, QueryRecord, COMPRESSED_TOKEN_LIMIT};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::similarity::SimilarityBackend;
use crate::tokenizer::{token_count, truncate_to_tokens, TokenSeq, Vocabulary, COPY_ID};

/// System line of the in-context template.
pub const SYSTEM_LINE: &str = "Given a query and a list of candidate documents, retrieve the title of the most relevant document. If the relevant document appears in the candidate list, output [COPY] followed by its title. Otherwise, output the title from memory directly.";

/// Tokens added per candidate by the template: the index marker and `Title:`.
pub const ITEM_OVERHEAD_TOKENS: usize = 2;

/// Tokens added after the candidate list: `Query:` and `Output:`.
pub const TAIL_OVERHEAD_TOKENS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceMode {
    ContextDependent,
    QueryIrrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub doc_id: String,
    pub display_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InContextInstance {
    pub query: QueryRecord,
    pub candidates: Vec<Candidate>,
    /// 0-based; present iff the gold document is among the candidates.
    pub gold_position: Option<usize>,
    pub mode: InstanceMode,
    pub supervision_target: TokenSeq,
    pub seed: u64,
}

impl InContextInstance {
    pub fn candidate_ids(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.doc_id.as_str()).collect()
    }

    pub fn gold_in_context(&self) -> bool {
        self.gold_position.is_some()
    }

    pub fn to_record(&self) -> InstanceRecord {
        InstanceRecord {
            qid: self.query.query_id.clone(),
            mode: self.mode,
            candidate_ids: self.candidates.iter().map(|c| c.doc_id.clone()).collect(),
            gold_position: self.gold_position,
            seed: self.seed,
        }
    }
}

/// One line of an instance batch file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub qid: String,
    pub mode: InstanceMode,
    pub candidate_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_position: Option<usize>,
    pub seed: u64,
}

/// Ranks documents of a corpus view by similarity to an anchor document.
pub struct NegativeMiner<'a, B: SimilarityBackend> {
    corpus: &'a Corpus,
    backend: &'a B,
    positions: Vec<usize>,
    embeddings: Vec<B::Embedding>,
    slot: HashMap<usize, usize>,
}

impl<'a, B: SimilarityBackend> NegativeMiner<'a, B> {
    /// Embeds every document of `view` (typically the training corpus).
    pub fn new<S: AsRef<str> + Sync>(
        backend: &'a B,
        corpus: &'a Corpus,
        view: &[S],
    ) -> Result<Self> {
        let mut positions = view
            .iter()
            .map(|id| {
                corpus
                    .position(id.as_ref())
                    .ok_or_else(|| Error::UnknownDocId(id.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        positions.sort_unstable();
        positions.dedup();
        let embeddings = positions
            .par_iter()
            .map(|&p| backend.embed(&corpus.doc(p).text))
            .collect();
        let slot = positions.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        Ok(NegativeMiner {
            corpus,
            backend,
            positions,
            embeddings,
            slot,
        })
    }

    pub fn view_len(&self) -> usize {
        self.positions.len()
    }

    /// Top-`k` most similar documents to `doc_id`, itself excluded, ties
    /// broken by canonical corpus order.
    pub fn mine(&self, doc_id: &str, k: usize) -> Result<Vec<String>> {
        let anchor_pos = self
            .corpus
            .position(doc_id)
            .ok_or_else(|| Error::UnknownDocId(doc_id.to_string()))?;
        if k == 0 {
            return Err(Error::invalid("hard negative count k must be at least 1"));
        }
        let own_slot = self.slot.get(&anchor_pos).copied();
        let available = self.positions.len() - usize::from(own_slot.is_some());
        if k > available {
            return Err(Error::invalid(format!(
                "requested {k} hard negatives but only {available} other documents exist"
            )));
        }
        let fresh;
        let anchor = match own_slot {
            Some(i) => &self.embeddings[i],
            None => {
                fresh = self.backend.embed(&self.corpus.doc(anchor_pos).text);
                &fresh
            }
        };
        let mut scored: Vec<(f64, usize)> = self
            .positions
            .iter()
            .zip(&self.embeddings)
            .filter(|(&p, _)| p != anchor_pos)
            .map(|(&p, e)| (self.backend.similarity(anchor, e), p))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_unstable_by(order);
        Ok(scored
            .into_iter()
            .map(|(_, p)| self.corpus.doc(p).doc_id.clone())
            .collect())
    }
}

/// Builds instances against a corpus and vocabulary.
#[derive(Clone, Copy)]
pub struct InstanceFactory<'a> {
    corpus: &'a Corpus,
    vocab: &'a Vocabulary,
}

impl<'a> InstanceFactory<'a> {
    pub fn new(corpus: &'a Corpus, vocab: &'a Vocabulary) -> Self {
        InstanceFactory { corpus, vocab }
    }

    /// Candidate with the compressed text if available, otherwise the body
    /// truncated to the compression token budget.
    pub fn candidate(&self, doc_id: &str) -> Result<Candidate> {
        let doc = self
            .corpus
            .get(doc_id)
            .ok_or_else(|| Error::UnknownDocId(doc_id.to_string()))?;
        let display_text = match &doc.compressed_text {
            Some(c) => c.clone(),
            None => truncate_to_tokens(&doc.text, COMPRESSED_TOKEN_LIMIT).to_string(),
        };
        Ok(Candidate {
            doc_id: doc.doc_id.clone(),
            display_text,
        })
    }

    fn title_candidate(&self, doc_id: &str) -> Result<Candidate> {
        if !self.corpus.contains(doc_id) {
            return Err(Error::UnknownDocId(doc_id.to_string()));
        }
        Ok(Candidate {
            doc_id: doc_id.to_string(),
            display_text: String::new(),
        })
    }

    fn target(&self, query: &QueryRecord, mode: InstanceMode) -> TokenSeq {
        let mut ids = Vec::new();
        if mode == InstanceMode::ContextDependent {
            ids.push(COPY_ID);
        }
        ids.extend(self.vocab.encode_docid(&query.gold_doc_id).0);
        TokenSeq(ids)
    }

    fn check_distractors(query: &QueryRecord, ids: &[String]) -> Result<()> {
        let mut seen = HashSet::with_capacity(ids.len());
        for id in ids {
            if *id == query.gold_doc_id {
                return Err(Error::invalid(format!(
                    "gold document {id:?} of query {} appears among its negatives",
                    query.query_id
                )));
            }
            if !seen.insert(id) {
                return Err(Error::invalid(format!("negative {id:?} listed twice")));
            }
        }
        Ok(())
    }

    /// Gold placed at a seeded-uniform slot among `n`; the other slots hold
    /// the first `n - 1` negatives in order.
    pub fn context_dependent(
        &self,
        query: &QueryRecord,
        negatives: &[String],
        n: usize,
        seed: u64,
    ) -> Result<InContextInstance> {
        if n == 0 {
            return Err(Error::invalid("shot count n must be at least 1"));
        }
        if negatives.len() < n - 1 {
            return Err(Error::invalid(format!(
                "need {} negatives for n = {n}, got {}",
                n - 1,
                negatives.len()
            )));
        }
        Self::check_distractors(query, negatives)?;
        let pos = gold_slot(seed, &query.query_id, n);
        let mut candidates = negatives[..n - 1]
            .iter()
            .map(|id| self.candidate(id))
            .collect::<Result<Vec<_>>>()?;
        candidates.insert(pos, self.candidate(&query.gold_doc_id)?);
        Ok(InContextInstance {
            query: query.clone(),
            candidates,
            gold_position: Some(pos),
            mode: InstanceMode::ContextDependent,
            supervision_target: self.target(query, InstanceMode::ContextDependent),
            seed,
        })
    }

    /// Context of the first `n` negatives only; the target is the bare gold
    /// docid.
    pub fn query_irrelevant(
        &self,
        query: &QueryRecord,
        negatives: &[String],
        n: usize,
        seed: u64,
    ) -> Result<InContextInstance> {
        if n == 0 {
            return Err(Error::invalid("shot count n must be at least 1"));
        }
        Self::check_distractors(query, negatives)?;
        if negatives.len() < n {
            return Err(Error::invalid(format!(
                "need {n} negatives, got {}",
                negatives.len()
            )));
        }
        let candidates = negatives[..n]
            .iter()
            .map(|id| self.candidate(id))
            .collect::<Result<Vec<_>>>()?;
        Ok(InContextInstance {
            query: query.clone(),
            candidates,
            gold_position: None,
            mode: InstanceMode::QueryIrrelevant,
            supervision_target: self.target(query, InstanceMode::QueryIrrelevant),
            seed,
        })
    }

    /// Instance over an explicit candidate list; the mode follows from whether
    /// the gold is listed.
    pub fn with_candidates(
        &self,
        query: &QueryRecord,
        candidate_ids: &[String],
        seed: u64,
    ) -> Result<InContextInstance> {
        if candidate_ids.is_empty() {
            return Err(Error::Empty("candidate list"));
        }
        let mut seen = HashSet::with_capacity(candidate_ids.len());
        if let Some(dup) = candidate_ids.iter().find(|id| !seen.insert(*id)) {
            return Err(Error::invalid(format!("candidate {dup:?} listed twice")));
        }
        let candidates = candidate_ids
            .iter()
            .map(|id| self.candidate(id))
            .collect::<Result<Vec<_>>>()?;
        let gold_position = candidate_ids.iter().position(|id| *id == query.gold_doc_id);
        let mode = if gold_position.is_some() {
            InstanceMode::ContextDependent
        } else {
            InstanceMode::QueryIrrelevant
        };
        Ok(InContextInstance {
            query: query.clone(),
            candidates,
            gold_position,
            mode,
            supervision_target: self.target(query, mode),
            seed,
        })
    }

    pub fn from_record(
        &self,
        record: &InstanceRecord,
        query: &QueryRecord,
    ) -> Result<InContextInstance> {
        if record.qid != query.query_id {
            return Err(Error::invalid(format!(
                "instance for {} paired with query {}",
                record.qid, query.query_id
            )));
        }
        let inst = self.with_candidates(query, &record.candidate_ids, record.seed)?;
        if inst.mode != record.mode || inst.gold_position != record.gold_position {
            return Err(Error::invalid(format!(
                "instance record for {} disagrees with its gold placement",
                record.qid
            )));
        }
        Ok(inst)
    }

    /// Title-only context of `k` docids drawn without replacement from
    /// `pool` (the gold itself is never drawn). With `include_gold`, `k - 1`
    /// distractors plus the gold at a seeded-uniform slot; otherwise `k`
    /// distractors.
    pub fn title_only(
        &self,
        query: &QueryRecord,
        pool: &[String],
        k: usize,
        include_gold: bool,
        seed: u64,
    ) -> Result<InContextInstance> {
        if k == 0 {
            return Err(Error::invalid("title context size K must be at least 1"));
        }
        let pool: Vec<&String> = pool.iter().filter(|id| **id != query.gold_doc_id).collect();
        let n_distractors = if include_gold { k - 1 } else { k };
        if pool.len() < n_distractors {
            return Err(Error::invalid(format!(
                "need {n_distractors} distractor titles, got {}",
                pool.len()
            )));
        }
        let mut rng = rng_for(seed, &[&query.query_id, "title-distractors"]);
        let picked: Vec<&String> = pool
            .choose_multiple(&mut rng, n_distractors)
            .copied()
            .collect();
        let mut candidates = picked
            .into_iter()
            .map(|id| self.title_candidate(id))
            .collect::<Result<Vec<_>>>()?;
        let (gold_position, mode) = if include_gold {
            let pos = gold_slot(seed, &query.query_id, k);
            candidates.insert(pos, self.title_candidate(&query.gold_doc_id)?);
            (Some(pos), InstanceMode::ContextDependent)
        } else {
            (None, InstanceMode::QueryIrrelevant)
        };
        Ok(InContextInstance {
            query: query.clone(),
            candidates,
            gold_position,
            mode,
            supervision_target: self.target(query, mode),
            seed,
        })
    }
}

fn gold_slot(seed: u64, query_id: &str, n: usize) -> usize {
    rng_for(seed, &[query_id, "gold-position"]).random_range(0..n)
}

/// Seeded sample without replacement of `n` entries of `pool`, in sampled
/// order.
pub fn sample_negatives(pool: &[String], n: usize, seed: u64, key: &str) -> Vec<String> {
    let mut rng = rng_for(seed, &[key, "negative-sample"]);
    pool.choose_multiple(&mut rng, n.min(pool.len()))
        .cloned()
        .collect()
}

/// Renders the in-context prompt. Candidates are numbered from 1; a
/// candidate without display text renders on one line as `[i] Title: ...`.
pub fn render_template(instance: &InContextInstance) -> String {
    let mut out = String::with_capacity(
        SYSTEM_LINE.len()
            + instance
                .candidates
                .iter()
                .map(|c| c.display_text.len() + c.doc_id.len() + 16)
                .sum::<usize>()
            + instance.query.text.len()
            + 32,
    );
    out.push_str(SYSTEM_LINE);
    out.push_str("\n\nCandidates:\n");
    for (i, c) in instance.candidates.iter().enumerate() {
        if c.display_text.is_empty() {
            out.push_str(&format!("[{}] Title: {}\n", i + 1, c.doc_id));
        } else {
            out.push_str(&format!(
                "[{}] {}\nTitle: {}\n",
                i + 1,
                c.display_text,
                c.doc_id
            ));
        }
    }
    out.push_str("Query: ");
    out.push_str(&instance.query.text);
    out.push_str("\nOutput:");
    out
}

/// Tokens contributed by the fixed template text before the first candidate.
pub fn header_tokens() -> usize {
    token_count(SYSTEM_LINE) + 1
}

/// Prompt length in tokens:
/// `header + sum_i (ITEM_OVERHEAD + |display_i| + |docid_i|) + TAIL_OVERHEAD + |query|`.
pub fn prompt_token_budget(instance: &InContextInstance) -> usize {
    header_tokens()
        + instance
            .candidates
            .iter()
            .map(|c| ITEM_OVERHEAD_TOKENS + token_count(&c.display_text) + token_count(&c.doc_id))
            .sum::<usize>()
        + TAIL_OVERHEAD_TOKENS
        + token_count(&instance.query.text)
}

/// An instance together with its encoded rendering.
#[derive(Debug, Clone)]
pub struct Prompt {
    pub instance: InContextInstance,
    pub tokens: TokenSeq,
}

impl Prompt {
    pub fn new(vocab: &Vocabulary, instance: InContextInstance) -> Self {
        let tokens = vocab.encode(&render_template(&instance));
        Prompt { instance, tokens }
    }
}
