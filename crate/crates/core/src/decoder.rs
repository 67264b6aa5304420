//! Context-aware constrained beam search.
//!
//! The first step chooses the route: the scorer's distribution is restricted
//! to `[COPY]` plus the start tokens of the global trie and renormalized. A
//! hypothesis that starts with `[COPY]` continues under the per-query context
//! trie; any other hypothesis continues under the global trie. At every step
//! the log-probabilities are renormalized over the tokens the hypothesis's
//! trie allows, so a path's score is the sum of those renormalized terms.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::scorer::{ScoringSession, TokenScorer};
use crate::tokenizer::{TokenId, TokenSeq, COPY_ID, EOS_ID};
use crate::trie::{DocidTrie, NodeId, ROOT};

pub const DEFAULT_BEAM_WIDTH: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Copy,
    Parametric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeEntry {
    pub route: Route,
    pub doc_id: String,
    pub logscore: f64,
    pub token_path: TokenSeq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    /// Ranked by score, best first; one entry per docid.
    pub entries: Vec<DecodeEntry>,
    /// Step-0 probability of `[COPY]` after renormalizing over the allowed
    /// first tokens.
    pub copy_confidence: f64,
}

impl DecodeResult {
    pub fn top(&self) -> Option<&DecodeEntry> {
        self.entries.first()
    }

    /// 1-based rank of `doc_id`.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.doc_id == doc_id)
            .map(|i| i + 1)
    }

    pub fn hit_at(&self, doc_id: &str, k: usize) -> bool {
        self.rank_of(doc_id).is_some_and(|r| r <= k)
    }
}

/// One decoding step, for debugging traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    /// Total allowed-set size over all expanded hypotheses.
    pub allowed: usize,
    /// Expansions kept (active or completed) with their scores.
    pub kept: Vec<(TokenSeq, f64)>,
}

#[derive(Debug, Clone, Default)]
pub struct DecodeStats {
    pub first_step: Duration,
    pub total: Duration,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>,
    route: Route,
    node: NodeId,
    score: f64,
}

fn rank_order(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub struct BeamSearch<'a> {
    pub global: &'a DocidTrie,
    pub context: &'a DocidTrie,
    pub beam_width: usize,
    pub trace: bool,
}

impl<'a> BeamSearch<'a> {
    pub fn new(global: &'a DocidTrie, context: &'a DocidTrie, beam_width: usize) -> Self {
        BeamSearch {
            global,
            context,
            beam_width,
            trace: false,
        }
    }

    fn trie(&self, route: Route) -> &'a DocidTrie {
        match route {
            Route::Copy => self.context,
            Route::Parametric => self.global,
        }
    }

    pub fn run(&self, session: &dyn ScoringSession) -> Result<(DecodeResult, DecodeStats)> {
        if self.beam_width == 0 {
            return Err(Error::invalid("beam width must be at least 1"));
        }
        if self.global.is_empty() || self.context.is_empty() {
            return Err(Error::Empty("docid trie"));
        }
        let started = Instant::now();
        let mut stats = DecodeStats::default();
        let b = self.beam_width;

        // step 0: route decision
        let lp = session.next_logprobs(&[]);
        let starts = self.global.children(ROOT);
        let allowed = std::iter::once(lp[COPY_ID as usize])
            .chain(starts.iter().map(|&(t, _)| lp[t as usize]));
        let norm = logsumexp(allowed);
        let copy_score = lp[COPY_ID as usize] - norm;
        let copy_confidence = copy_score.exp();
        let mut expansions: Vec<Hypothesis> = Vec::with_capacity(starts.len() + 1);
        expansions.push(Hypothesis {
            tokens: vec![COPY_ID],
            route: Route::Copy,
            node: ROOT,
            score: copy_score,
        });
        expansions.extend(starts.iter().map(|&(t, n)| Hypothesis {
            tokens: vec![t],
            route: Route::Parametric,
            node: n,
            score: lp[t as usize] - norm,
        }));
        stats.first_step = started.elapsed();

        let mut completed: Vec<Hypothesis> = Vec::new();
        let mut active = self.select(expansions, &mut completed, starts.len() + 1, 0, &mut stats);

        let mut step = 1;
        while !active.is_empty() {
            if completed.len() >= b {
                completed.sort_by(|x, y| rank_order((x.score, &x.tokens), (y.score, &y.tokens)));
                let cutoff = completed[b - 1].score;
                // scores never increase along a path
                if active.iter().all(|h| h.score <= cutoff) {
                    break;
                }
            }
            let mut expansions = Vec::new();
            let mut allowed_total = 0;
            for h in &active {
                let trie = self.trie(h.route);
                let children = trie.children(h.node);
                if children.is_empty() {
                    continue;
                }
                allowed_total += children.len();
                let lp = session.next_logprobs(&h.tokens);
                let norm = logsumexp(children.iter().map(|&(t, _)| lp[t as usize]));
                for &(t, n) in children {
                    let mut tokens = h.tokens.clone();
                    tokens.push(t);
                    expansions.push(Hypothesis {
                        tokens,
                        route: h.route,
                        node: n,
                        score: h.score + (lp[t as usize] - norm),
                    });
                }
            }
            active = self.select(expansions, &mut completed, allowed_total, step, &mut stats);
            step += 1;
        }

        if completed.is_empty() {
            return Err(Error::NoCompletedHypothesis);
        }
        completed.sort_by(|x, y| rank_order((x.score, &x.tokens), (y.score, &y.tokens)));
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(b);
        for h in completed {
            let doc_id = self
                .trie(h.route)
                .terminal(h.node)
                .expect("completed hypotheses end on a terminal")
                .to_string();
            if !seen.insert(doc_id.clone()) {
                continue;
            }
            entries.push(DecodeEntry {
                route: h.route,
                doc_id,
                logscore: h.score,
                token_path: TokenSeq(h.tokens),
            });
            if entries.len() == b {
                break;
            }
        }
        stats.total = started.elapsed();
        Ok((
            DecodeResult {
                entries,
                copy_confidence,
            },
            stats,
        ))
    }

    /// Ranks expansions; `[EOS]` expansions move to `completed`, the rest fill
    /// up to `beam_width` active slots.
    fn select(
        &self,
        mut expansions: Vec<Hypothesis>,
        completed: &mut Vec<Hypothesis>,
        allowed: usize,
        step: usize,
        stats: &mut DecodeStats,
    ) -> Vec<Hypothesis> {
        expansions.sort_by(|x, y| rank_order((x.score, &x.tokens), (y.score, &y.tokens)));
        let mut active = Vec::with_capacity(self.beam_width);
        let mut kept = Vec::new();
        for h in expansions {
            if active.len() == self.beam_width {
                break;
            }
            if self.trace {
                kept.push((TokenSeq(h.tokens.clone()), h.score));
            }
            if h.tokens.last() == Some(&EOS_ID) {
                completed.push(h);
            } else {
                active.push(h);
            }
        }
        if self.trace {
            stats.trace.push(TraceStep {
                step,
                allowed,
                kept,
            });
        }
        active
    }
}

/// Decodes one prompt with a fresh scoring session.
pub fn constrained_beam_search(
    scorer: &dyn TokenScorer,
    prompt: &Prompt,
    global_trie: &DocidTrie,
    context_trie: &DocidTrie,
    beam_width: usize,
) -> Result<DecodeResult> {
    let session = scorer.session(prompt);
    BeamSearch::new(global_trie, context_trie, beam_width)
        .run(session.as_ref())
        .map(|(r, _)| r)
}
