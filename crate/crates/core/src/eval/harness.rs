//! Evaluation protocol.
//!
//! Adaptation queries (gold in the new split) get a query-specific candidate
//! set of the gold plus `N - 1` sampled new documents; the context-routed
//! system sees it in context, BM25 indexes it next to the training corpus.
//! Retention queries (gold in the training corpus) are evaluated twice: with
//! the gold among `N - 1` hard negatives (ctx) and with `N` hard negatives
//! only (noise).

use std::collections::BTreeSet;
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bm25::{bm25_retrieve, Bm25Index, Bm25Params};
use super::metrics::{ece, hits_at, DEFAULT_ECE_BINS};
use crate::corpus::{Corpus, CorpusSplit, QueryRecord};
use crate::decoder::{BeamSearch, DecodeResult, Route, DEFAULT_BEAM_WIDTH};
use crate::error::{Error, Result};
use crate::prompt::{InContextInstance, InstanceFactory, NegativeMiner, Prompt};
use crate::scorer::TokenScorer;
use crate::seed::rng_for;
use crate::similarity::TfIdfModel;
use crate::tokenizer::{token_count, Vocabulary};
use crate::trie::{build_context_trie, build_trie, DocidTrie};

pub const LATENCY_NOTE: &str =
    "latency fields are wall-clock proxies of the mock pipeline and are not comparable to accelerator inference";
pub const POOLING_NOTE: &str =
    "retention ECE pools the ctx and noise conditions of each query as independent samples";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuerySplit {
    Retention,
    Adaptation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Ctx,
    Noise,
}

impl QuerySplit {
    pub fn as_str(self) -> &'static str {
        match self {
            QuerySplit::Retention => "retention",
            QuerySplit::Adaptation => "adaptation",
        }
    }
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Ctx => "ctx",
            Condition::Noise => "noise",
        }
    }
}

#[derive(Clone, Copy)]
pub enum System<'a> {
    ContextRouted(&'a dyn TokenScorer),
    Bm25,
}

impl System<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            System::ContextRouted(_) => "context_routed",
            System::Bm25 => "bm25",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub n_shots: usize,
    pub beam_width: usize,
    pub seed: u64,
    pub ece_bins: usize,
    pub measure_latency: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            n_shots: 100,
            beam_width: DEFAULT_BEAM_WIDTH,
            seed: 0,
            ece_bins: DEFAULT_ECE_BINS,
            measure_latency: false,
        }
    }
}

/// `{gold} ∪ (n - 1)` distinct non-gold new documents, in shuffled order.
///
/// The non-gold pool is shuffled per `(seed, query)` and cut to its first
/// `n - 1` entries, so sets for increasing `n` are nested.
pub fn build_query_candidate_set<S: AsRef<str>>(
    query: &QueryRecord,
    new_ids: &[S],
    n: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::invalid("candidate set size N must be at least 1"));
    }
    if !new_ids.iter().any(|id| id.as_ref() == query.gold_doc_id) {
        return Err(Error::invalid(format!(
            "gold of query {} is not a new document",
            query.query_id
        )));
    }
    if n > new_ids.len() {
        return Err(Error::invalid(format!(
            "candidate set size {n} exceeds the {} new documents",
            new_ids.len()
        )));
    }
    let mut pool: Vec<String> = new_ids
        .iter()
        .map(|s| s.as_ref())
        .filter(|id| *id != query.gold_doc_id)
        .map(str::to_string)
        .collect();
    pool.shuffle(&mut rng_for(seed, &[&query.query_id, "candidate-pool"]));
    pool.truncate(n - 1);
    pool.push(query.gold_doc_id.clone());
    pool.shuffle(&mut rng_for(
        seed,
        &[&query.query_id, "candidate-order", &n.to_string()],
    ));
    Ok(pool)
}

/// One evaluated (query, condition) pair.
#[derive(Debug, Clone)]
pub struct QueryCase {
    pub split: QuerySplit,
    pub condition: Condition,
    pub instance: InContextInstance,
}

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub qid: String,
    pub split: QuerySplit,
    pub condition: Condition,
    pub gold_in_context: bool,
    pub rank_of_gold: Option<usize>,
    pub top_route: Option<Route>,
    pub top_doc: Option<String>,
    pub copy_confidence: Option<f64>,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub first_step: Option<Duration>,
    pub total: Option<Duration>,
    pub decode: Option<DecodeResult>,
}

impl CaseOutcome {
    fn hit1(&self) -> bool {
        self.rank_of_gold == Some(1)
    }
}

/// Read-only evaluation context shared by all queries.
pub struct EvalSetup<'a> {
    pub corpus: &'a Corpus,
    pub split: &'a CorpusSplit,
    pub vocab: &'a Vocabulary,
    pub global_trie: DocidTrie,
    miner: NegativeMiner<'a, TfIdfModel>,
    bm25_train: Bm25Index,
}

impl<'a> EvalSetup<'a> {
    pub fn new(
        corpus: &'a Corpus,
        split: &'a CorpusSplit,
        vocab: &'a Vocabulary,
        tfidf: &'a TfIdfModel,
    ) -> Result<Self> {
        Ok(EvalSetup {
            corpus,
            split,
            vocab,
            global_trie: build_trie(vocab, split.train_ids())?,
            miner: NegativeMiner::new(tfidf, corpus, split.train_ids())?,
            bm25_train: Bm25Index::build(corpus, split.train_ids())?,
        })
    }

    pub fn factory(&self) -> InstanceFactory<'a> {
        InstanceFactory::new(self.corpus, self.vocab)
    }

    pub fn miner(&self) -> &NegativeMiner<'a, TfIdfModel> {
        &self.miner
    }

    /// Cases in a fixed order: retention (ctx then noise per query), then
    /// adaptation.
    pub fn cases(
        &self,
        retention: &[QueryRecord],
        adaptation: &[QueryRecord],
        n: usize,
        seed: u64,
    ) -> Result<Vec<QueryCase>> {
        let f = self.factory();
        let ret: Vec<Vec<QueryCase>> = retention
            .par_iter()
            .map(|q| {
                if self.split.is_new(&q.gold_doc_id) {
                    return Err(Error::invalid(format!(
                        "retention query {} targets a new document",
                        q.query_id
                    )));
                }
                let negatives = self.miner.mine(&q.gold_doc_id, n)?;
                Ok(vec![
                    QueryCase {
                        split: QuerySplit::Retention,
                        condition: Condition::Ctx,
                        instance: f.context_dependent(q, &negatives, n, seed)?,
                    },
                    QueryCase {
                        split: QuerySplit::Retention,
                        condition: Condition::Noise,
                        instance: f.query_irrelevant(q, &negatives, n, seed)?,
                    },
                ])
            })
            .collect::<Result<_>>()?;
        let ada: Vec<QueryCase> = adaptation
            .par_iter()
            .map(|q| {
                let ids = build_query_candidate_set(q, self.split.new_ids(), n, seed)?;
                Ok(QueryCase {
                    split: QuerySplit::Adaptation,
                    condition: Condition::Ctx,
                    instance: f.with_candidates(q, &ids, seed)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ret.into_iter().flatten().chain(ada).collect())
    }

    pub fn context_trie(&self, case: &QueryCase) -> Result<DocidTrie> {
        build_context_trie(self.vocab, &case.instance.candidate_ids())
    }

    /// BM25 segment holding the case's candidates that are not training
    /// documents.
    pub fn bm25_extra(&self, case: &QueryCase) -> Result<Bm25Index> {
        let extra: Vec<&str> = case
            .instance
            .candidate_ids()
            .into_iter()
            .filter(|id| self.split.is_new(id))
            .collect();
        Bm25Index::build(self.corpus, &extra)
    }

    /// Docids the context-routed decoder can emit for this case.
    pub fn decoder_search_space(&self, case: &QueryCase) -> Result<BTreeSet<String>> {
        let ctx = self.context_trie(case)?;
        Ok(self
            .global_trie
            .doc_ids()
            .iter()
            .chain(ctx.doc_ids())
            .cloned()
            .collect())
    }

    /// Docids indexed by the BM25 baseline for this case.
    pub fn bm25_search_space(&self, case: &QueryCase) -> Result<BTreeSet<String>> {
        let extra = self.bm25_extra(case)?;
        Ok(self
            .bm25_train
            .doc_ids()
            .chain(extra.doc_ids())
            .map(str::to_string)
            .collect())
    }

    pub fn run_case(
        &self,
        system: System<'_>,
        case: &QueryCase,
        params: &EvalParams,
    ) -> Result<CaseOutcome> {
        let inst = &case.instance;
        let gold = &inst.query.gold_doc_id;
        let base = CaseOutcome {
            qid: inst.query.query_id.clone(),
            split: case.split,
            condition: case.condition,
            gold_in_context: inst.gold_in_context(),
            rank_of_gold: None,
            top_route: None,
            top_doc: None,
            copy_confidence: None,
            input_tokens: 0,
            output_tokens: 0,
            first_step: None,
            total: None,
            decode: None,
        };
        match system {
            System::ContextRouted(scorer) => {
                let prompt = Prompt::new(self.vocab, inst.clone());
                let ctx = self.context_trie(case)?;
                let started = Instant::now();
                let session = scorer.session(&prompt);
                let prefill = started.elapsed();
                let (result, stats) = BeamSearch::new(&self.global_trie, &ctx, params.beam_width)
                    .run(session.as_ref())?;
                let top = result.top();
                Ok(CaseOutcome {
                    rank_of_gold: result.rank_of(gold),
                    top_route: top.map(|e| e.route),
                    top_doc: top.map(|e| e.doc_id.clone()),
                    copy_confidence: Some(result.copy_confidence),
                    input_tokens: prompt.tokens.len(),
                    output_tokens: top.map_or(0, |e| e.token_path.len()),
                    first_step: params.measure_latency.then_some(prefill + stats.first_step),
                    total: params.measure_latency.then_some(prefill + stats.total),
                    decode: Some(result),
                    ..base
                })
            }
            System::Bm25 => {
                let started = Instant::now();
                let extra = self.bm25_extra(case)?;
                let k = params.beam_width.max(10);
                let ranked = bm25_retrieve(
                    &[&self.bm25_train, &extra],
                    &inst.query.text,
                    k,
                    Bm25Params::default(),
                );
                let elapsed = started.elapsed();
                Ok(CaseOutcome {
                    rank_of_gold: ranked.iter().position(|d| d == gold).map(|r| r + 1),
                    top_doc: ranked.first().cloned(),
                    input_tokens: token_count(&inst.query.text),
                    first_step: params.measure_latency.then_some(elapsed),
                    total: params.measure_latency.then_some(elapsed),
                    ..base
                })
            }
        }
    }

    pub fn run_cases(
        &self,
        system: System<'_>,
        cases: &[QueryCase],
        params: &EvalParams,
    ) -> Result<Vec<CaseOutcome>> {
        if params.measure_latency {
            // sequential so wall-clock numbers are not skewed by contention
            cases
                .iter()
                .map(|c| self.run_case(system, c, params))
                .collect()
        } else {
            cases
                .par_iter()
                .map(|c| self.run_case(system, c, params))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTaxonomy {
    pub emit_and_miss: f64,
    pub wrong_ctx_copy: f64,
    pub spurious_copy: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub instances: usize,
    pub hits_at_1: f64,
    pub hits_at_10: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub queries: usize,
    pub instances: usize,
    pub hits_at_1: f64,
    pub hits_at_10: f64,
    pub ece: Option<f64>,
    /// Over ctx instances: fraction whose top-1 took the copy route.
    pub routing_recall: Option<f64>,
    /// Over ctx instances whose top-1 took the copy route: fraction correct.
    pub hit_given_copy: Option<f64>,
    pub error_taxonomy: Option<ErrorTaxonomy>,
    pub conditions: Vec<ConditionReport>,
}

impl SplitReport {
    pub fn condition(&self, c: Condition) -> Option<&ConditionReport> {
        self.conditions.iter().find(|r| r.condition == c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub note: String,
    pub mean_input_tokens: f64,
    pub mean_output_tokens: f64,
    pub mean_ttft_seconds: Option<f64>,
    pub mean_total_seconds: Option<f64>,
    pub throughput_tokens_per_second: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub n_shots: usize,
    pub beam_width: usize,
    pub seed: u64,
    pub ece_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub dataset: String,
    pub timestamp: String,
    pub config: ConfigEcho,
    pub retention: Option<SplitReport>,
    pub adaptation: Option<SplitReport>,
    /// Pooled over every instance of both splits.
    pub ece: Option<f64>,
    pub latency: LatencyReport,
    pub notes: Vec<String>,
}

fn frac(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn calibration(rows: &[&CaseOutcome], bins: usize) -> Result<Option<f64>> {
    let s: Vec<f64> = rows.iter().filter_map(|r| r.copy_confidence).collect();
    if s.is_empty() || s.len() != rows.len() {
        return Ok(None);
    }
    let z: Vec<bool> = rows.iter().map(|r| r.gold_in_context).collect();
    ece(&s, &z, bins).map(Some)
}

fn split_report(rows: &[&CaseOutcome], routed: bool, bins: usize) -> Result<Option<SplitReport>> {
    if rows.is_empty() {
        return Ok(None);
    }
    let ranks: Vec<Option<usize>> = rows.iter().map(|r| r.rank_of_gold).collect();
    let mut qids: Vec<&str> = rows.iter().map(|r| r.qid.as_str()).collect();
    qids.sort_unstable();
    qids.dedup();
    let mut conditions = Vec::new();
    for c in [Condition::Ctx, Condition::Noise] {
        let sub: Vec<Option<usize>> = rows
            .iter()
            .filter(|r| r.condition == c)
            .map(|r| r.rank_of_gold)
            .collect();
        if !sub.is_empty() {
            conditions.push(ConditionReport {
                condition: c,
                instances: sub.len(),
                hits_at_1: hits_at(&sub, 1),
                hits_at_10: hits_at(&sub, 10),
            });
        }
    }
    let (mut routing_recall, mut hit_given_copy, mut error_taxonomy, mut ece_value) =
        (None, None, None, None);
    if routed {
        let ctx: Vec<&&CaseOutcome> = rows.iter().filter(|r| r.gold_in_context).collect();
        let copied: Vec<&&CaseOutcome> = ctx
            .iter()
            .copied()
            .filter(|r| r.top_route == Some(Route::Copy))
            .collect();
        if !ctx.is_empty() {
            routing_recall = Some(frac(copied.len(), ctx.len()));
        }
        if !copied.is_empty() {
            hit_given_copy = Some(frac(
                copied.iter().filter(|r| r.hit1()).count(),
                copied.len(),
            ));
        }
        let n = rows.len();
        let emit_miss = rows
            .iter()
            .filter(|r| r.top_route == Some(Route::Copy) && !r.hit1())
            .count();
        let wrong_ctx = rows
            .iter()
            .filter(|r| r.gold_in_context && r.top_route == Some(Route::Copy) && !r.hit1())
            .count();
        let spurious = rows
            .iter()
            .filter(|r| !r.gold_in_context && r.top_route == Some(Route::Copy))
            .count();
        error_taxonomy = Some(ErrorTaxonomy {
            emit_and_miss: frac(emit_miss, n),
            wrong_ctx_copy: frac(wrong_ctx, n),
            spurious_copy: frac(spurious, n),
            miss_rate: frac(emit_miss, n),
        });
        ece_value = calibration(rows, bins)?;
    }
    Ok(Some(SplitReport {
        queries: qids.len(),
        instances: rows.len(),
        hits_at_1: hits_at(&ranks, 1),
        hits_at_10: hits_at(&ranks, 10),
        ece: ece_value,
        routing_recall,
        hit_given_copy,
        error_taxonomy,
        conditions,
    }))
}

pub fn latency_summary(rows: &[CaseOutcome]) -> LatencyReport {
    let n = rows.len().max(1) as f64;
    let timed: Vec<(&Duration, &Duration)> = rows
        .iter()
        .filter_map(|r| r.first_step.as_ref().zip(r.total.as_ref()))
        .collect();
    let output_tokens: usize = rows.iter().map(|r| r.output_tokens).sum();
    let (ttft, total, throughput) = if timed.is_empty() || timed.len() != rows.len() {
        (None, None, None)
    } else {
        let t_first: f64 = timed.iter().map(|(f, _)| f.as_secs_f64()).sum();
        let t_total: f64 = timed.iter().map(|(_, t)| t.as_secs_f64()).sum();
        let thr = (output_tokens > 0 && t_total > 0.0).then(|| output_tokens as f64 / t_total);
        (Some(t_first / n), Some(t_total / n), thr)
    };
    LatencyReport {
        note: LATENCY_NOTE.to_string(),
        mean_input_tokens: rows.iter().map(|r| r.input_tokens).sum::<usize>() as f64 / n,
        mean_output_tokens: output_tokens as f64 / n,
        mean_ttft_seconds: ttft,
        mean_total_seconds: total,
        throughput_tokens_per_second: throughput,
    }
}

pub fn summarize(
    system: System<'_>,
    dataset: &str,
    params: &EvalParams,
    rows: &[CaseOutcome],
) -> Result<EvalReport> {
    let routed = matches!(system, System::ContextRouted(_));
    let by_split = |s: QuerySplit| rows.iter().filter(|r| r.split == s).collect::<Vec<_>>();
    let all: Vec<&CaseOutcome> = rows.iter().collect();
    Ok(EvalReport {
        system: system.name().to_string(),
        dataset: dataset.to_string(),
        timestamp: String::new(),
        config: ConfigEcho {
            n_shots: params.n_shots,
            beam_width: params.beam_width,
            seed: params.seed,
            ece_bins: params.ece_bins,
        },
        retention: split_report(&by_split(QuerySplit::Retention), routed, params.ece_bins)?,
        adaptation: split_report(&by_split(QuerySplit::Adaptation), routed, params.ece_bins)?,
        ece: if routed {
            calibration(&all, params.ece_bins)?
        } else {
            None
        },
        latency: latency_summary(rows),
        notes: vec![POOLING_NOTE.to_string(), LATENCY_NOTE.to_string()],
    })
}

/// Evaluates `system` and also returns the per-case outcomes.
pub fn evaluate_detailed(
    setup: &EvalSetup<'_>,
    system: System<'_>,
    retention: &[QueryRecord],
    adaptation: &[QueryRecord],
    params: &EvalParams,
    dataset: &str,
) -> Result<(EvalReport, Vec<CaseOutcome>)> {
    if retention.is_empty() && adaptation.is_empty() {
        return Err(Error::Empty("query lists"));
    }
    if params.beam_width == 0 || params.ece_bins == 0 {
        return Err(Error::invalid(
            "beam width and ECE bin count must be positive",
        ));
    }
    let cases = setup.cases(retention, adaptation, params.n_shots, params.seed)?;
    let rows = setup.run_cases(system, &cases, params)?;
    let report = summarize(system, dataset, params, &rows)?;
    Ok((report, rows))
}

pub fn evaluate(
    setup: &EvalSetup<'_>,
    system: System<'_>,
    retention: &[QueryRecord],
    adaptation: &[QueryRecord],
    params: &EvalParams,
    dataset: &str,
) -> Result<EvalReport> {
    evaluate_detailed(setup, system, retention, adaptation, params, dataset).map(|(r, _)| r)
}

/// One report per shot count, all under the same seed.
pub fn shot_sweep(
    setup: &EvalSetup<'_>,
    system: System<'_>,
    retention: &[QueryRecord],
    adaptation: &[QueryRecord],
    shots: &[usize],
    params: &EvalParams,
    dataset: &str,
) -> Result<Vec<EvalReport>> {
    if shots.is_empty() {
        return Err(Error::Empty("shot list"));
    }
    if shots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("shot counts must be strictly ascending"));
    }
    shots
        .iter()
        .map(|&n| {
            let p = EvalParams {
                n_shots: n,
                ..*params
            };
            evaluate(setup, system, retention, adaptation, &p, dataset)
        })
        .collect()
}

/// Input-token counts and wall-clock timings over `queries`.
pub fn latency_probe(
    setup: &EvalSetup<'_>,
    system: System<'_>,
    queries: &[QueryRecord],
    n: usize,
    beam_width: usize,
    seed: u64,
) -> Result<LatencyReport> {
    let (retention, adaptation): (Vec<QueryRecord>, Vec<QueryRecord>) = queries
        .iter()
        .cloned()
        .partition(|q| !setup.split.is_new(&q.gold_doc_id));
    let params = EvalParams {
        n_shots: n,
        beam_width,
        seed,
        measure_latency: true,
        ..Default::default()
    };
    let cases = setup.cases(&retention, &adaptation, n, seed)?;
    let rows = setup.run_cases(system, &cases, &params)?;
    Ok(latency_summary(&rows))
}

fn route_str(r: Route) -> &'static str {
    match r {
        Route::Copy => "copy",
        Route::Parametric => "parametric",
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Per-case rows `qid,split,condition,rank_of_gold,route,s`.
pub fn write_rows_csv<W: Write>(rows: &[CaseOutcome], mut w: W) -> std::io::Result<()> {
    writeln!(w, "qid,split,condition,rank_of_gold,route,s")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            csv_field(&r.qid),
            r.split.as_str(),
            r.condition.as_str(),
            r.rank_of_gold.map(|x| x.to_string()).unwrap_or_default(),
            r.top_route.map_or("", route_str),
            r.copy_confidence.map(|x| x.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}
