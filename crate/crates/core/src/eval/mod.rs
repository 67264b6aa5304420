//! Evaluation: metrics, the BM25 baseline and the query-level protocol.

pub mod bm25;
pub mod harness;
pub mod metrics;

pub use bm25::{bm25_retrieve, Bm25Index, Bm25Params};
pub use harness::{
    build_query_candidate_set, evaluate, evaluate_detailed, latency_probe, shot_sweep,
    write_rows_csv, CaseOutcome, Condition, EvalParams, EvalReport, EvalSetup, QueryCase,
    QuerySplit, SplitReport, System,
};
pub use metrics::{ece, hits_at};
