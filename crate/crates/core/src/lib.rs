//! Guardrail toolkit for LLM chat systems built around a six-class banking
//! risk taxonomy.
//!
//! - [`taxonomy`]: the class set, thresholds and severity order.
//! - [`corpus`]: examples with provenance, deduplication and stratified splits.
//! - [`scorer`]: backend contract, reference scorer and verdict aggregation.
//! - [`evalkit`]: classification metrics, AUPRC and latency benchmarking.
//! - [`foundry`]: synthetic data generation, filtering and review triage.
//! - [`judges`]: LLM-as-judge prompts, output parsing and classification.
//! - [`testing`]: deterministic doubles for backends and chat models.

pub mod corpus;
pub mod evalkit;
pub mod foundry;
pub mod judges;
pub mod jsonl;
pub mod scorer;
pub mod taxonomy;
pub mod testing;

pub use corpus::{Dataset, Example, Origin};
pub use scorer::{
    batch_score, binary_decision, multiclass_decision, BackendError, BinaryVerdict, Decision,
    InferenceBackend, LexiconScorer, MulticlassVerdict, ScoreVector,
};
pub use taxonomy::{RiskClass, RiskLabel, Scope, Taxonomy};
