//! Context-routed generative retrieval.
//!
//! Documents are identified by their titles. A decoder either emits a special
//! `[COPY]` token and then copies one of the in-context candidate titles, or
//! generates a title from parametric memory; both routes are constrained by
//! docid tries so every output is a real document.

pub mod corpus;
pub mod decoder;
pub mod dpo;
pub mod error;
pub mod eval;
pub mod prompt;
pub mod scorer;
pub mod seed;
pub mod similarity;
pub mod synth;
pub mod tokenizer;
pub mod trie;

pub use error::{Error, Result};
