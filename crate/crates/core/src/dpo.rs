//! Preference pairs mined from decode results, and the DPO objective
//! evaluated as a pure function of sequence log-probabilities.
//!
//! ```text
//! loss = -log sigmoid(beta * ((lp_pol_c - lp_ref_c) - (lp_pol_r - lp_ref_r)))
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{constrained_beam_search, DecodeResult, Route};
use crate::error::Result;
use crate::prompt::{InContextInstance, InstanceMode, Prompt};
use crate::scorer::{sequence_nll, TokenScorer};
use crate::tokenizer::{TokenSeq, Vocabulary, COPY_ID};
use crate::trie::{build_context_trie, DocidTrie};

pub const DEFAULT_BETA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    RankingFailure,
    RoutingFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    #[serde(rename = "qid")]
    pub prompt_ref: String,
    pub kind: PairKind,
    #[serde(rename = "chosen_tokens")]
    pub chosen: TokenSeq,
    #[serde(rename = "rejected_tokens")]
    pub rejected: TokenSeq,
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn dpo_loss(lp_pol_c: f64, lp_ref_c: f64, lp_pol_r: f64, lp_ref_r: f64, beta: f64) -> f64 {
    let margin = beta * ((lp_pol_c - lp_ref_c) - (lp_pol_r - lp_ref_r));
    softplus(-margin)
}

/// DPO loss of one pair, with all four sequence log-probabilities taken on the
/// same in-context prompt.
pub fn pair_margin(
    policy: &dyn TokenScorer,
    reference: &dyn TokenScorer,
    pair: &PreferencePair,
    prompt: &Prompt,
    beta: f64,
) -> Result<f64> {
    let lp = |s: &dyn TokenScorer, seq: &TokenSeq| sequence_nll(s, prompt, seq).map(|n| -n);
    Ok(dpo_loss(
        lp(policy, &pair.chosen)?,
        lp(reference, &pair.chosen)?,
        lp(policy, &pair.rejected)?,
        lp(reference, &pair.rejected)?,
        beta,
    ))
}

/// Pairs for one decoded instance.
///
/// A ranking failure is recorded when the gold docid sits in the top `b` but
/// not at rank 1 (chosen: the gold beam, rejected: the rank-1 beam). A routing
/// failure is recorded for a context-dependent instance whose top-1 took the
/// parametric route and missed (chosen: `[COPY]` plus the gold docid,
/// rejected: that parametric prediction).
pub fn mine_instance(
    instance: &InContextInstance,
    result: &DecodeResult,
    b: usize,
    vocab: &Vocabulary,
) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    let gold = &instance.query.gold_doc_id;
    let Some(top) = result.top() else {
        return out;
    };
    if top.doc_id == *gold {
        return out;
    }
    if let Some(gold_entry) = result.entries.iter().take(b).find(|e| e.doc_id == *gold) {
        out.push(PreferencePair {
            prompt_ref: instance.query.query_id.clone(),
            kind: PairKind::RankingFailure,
            chosen: gold_entry.token_path.clone(),
            rejected: top.token_path.clone(),
        });
    }
    if instance.mode == InstanceMode::ContextDependent && top.route == Route::Parametric {
        let mut chosen = vec![COPY_ID];
        chosen.extend(vocab.encode_docid(gold).0);
        out.push(PreferencePair {
            prompt_ref: instance.query.query_id.clone(),
            kind: PairKind::RoutingFailure,
            chosen: TokenSeq(chosen),
            rejected: top.token_path.clone(),
        });
    }
    out
}

pub fn mine_pairs<'r, I>(results: I, b: usize, vocab: &Vocabulary) -> Vec<PreferencePair>
where
    I: IntoIterator<Item = (&'r InContextInstance, &'r DecodeResult)>,
{
    results
        .into_iter()
        .flat_map(|(inst, res)| mine_instance(inst, res, b, vocab))
        .collect()
}

/// Decodes every instance with beam width `b` and mines its pairs, keeping
/// instance order.
pub fn decode_and_mine(
    scorer: &dyn TokenScorer,
    vocab: &Vocabulary,
    global_trie: &DocidTrie,
    instances: &[InContextInstance],
    b: usize,
) -> Result<Vec<PreferencePair>> {
    let per_instance: Vec<Vec<PreferencePair>> = instances
        .par_iter()
        .map(|inst| {
            let ctx = build_context_trie(vocab, &inst.candidate_ids())?;
            let prompt = Prompt::new(vocab, inst.clone());
            let result = constrained_beam_search(scorer, &prompt, global_trie, &ctx, b)?;
            Ok(mine_instance(inst, &result, b, vocab))
        })
        .collect::<Result<_>>()?;
    Ok(per_instance.into_iter().flatten().collect())
}
