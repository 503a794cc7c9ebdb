//! Faithfulness-aware sequence decoding at desk scale.
//!
//! Baseline decoders (greedy, beam, nucleus) run over any
//! [`ConditionalModel`](models::ConditionalModel). On top of them sit
//! metric re-ranking of beam candidates, lookahead decoding that scores each
//! candidate token by a rolled-out completion, and decoding distillation that
//! trains a student on teacher outputs. The [`harness`] module generates
//! synthetic corpora and runs seeded experiments.

pub mod decoders;
pub mod distill;
pub mod domain;
pub mod error;
pub mod guided;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod recipe;

pub use domain::{Document, Hypothesis, ScoredCandidate, TokenId, Vocabulary};
pub use error::{Error, Result};
