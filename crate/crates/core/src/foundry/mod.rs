//! Synthetic data pipeline: aspect-driven few-shot generation,
//! counterfactual rewrites, classical augmentation, round-trip and distance
//! filtering, uncertainty triage and review commits.
//!
//! Every step is deterministic given its seeds and the behaviour of the
//! injected chat model, backend and embedder.

mod aspects;
mod augment;
mod embed;
mod filter;
mod generate;
pub mod pipeline;
mod triage;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Example, SynthesisStage};
use crate::judges::ChatError;
use crate::scorer::BackendError;
use crate::taxonomy::RiskLabel;

pub use aspects::{aspect_catalog, sample_aspects, AspectSpec};
pub use augment::{
    augment, augment_example, backtranslate, backtranslate_example, AugmentOp, Backtranslation,
    SynonymProvider, Thesaurus, TRANSLATE_TEMPLATE,
};
pub use embed::{
    cosine, euclidean, export_embeddings, reference_embed, EmbedError, Embedder, HashingEmbedder,
    REFERENCE_DIM,
};
pub use filter::{
    distance_filter, roundtrip_filter, DistanceInfo, DistancePolicy, FilterRecord, FilterReport,
    KeepStats,
};
pub use generate::{
    assemble_generation_prompt, counterfactual, generate_candidates, parse_generated_lines,
    GenerateOptions, GenerationPrompt, GenerationRecipe, COUNTERFACTUAL_TEMPLATE,
    DEFAULT_GENERATION_TEMPLATE,
};
pub use pipeline::{run_round, RoundConfig, RoundOutput};
pub use triage::{
    commit_review, triage_order, uncertainty_triage, Resolution, ReviewDecision, TriageItem, TriagePolicy,
    TriageStatus,
};

#[derive(Debug, Error)]
pub enum FoundryError {
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("need {needed} exemplars of {label}, seed pool has {available}")]
    InsufficientExemplars {
        label: RiskLabel,
        needed: usize,
        available: usize,
    },
    #[error("retry budget exhausted after {attempts} calls with {} candidates", partial.len())]
    Exhausted {
        partial: Vec<Candidate>,
        attempts: u32,
    },
    #[error("counterfactual target equals source label {0}")]
    SameLabel(RiskLabel),
    #[error("chat model returned an empty rewrite")]
    EmptyRewrite,
    #[error("pivot language must not be empty")]
    EmptyPivot,
    #[error("text must not be empty")]
    EmptyText,
    #[error("chat model returned an empty translation")]
    EmptyTranslation,
    #[error("invalid policy: {0}")]
    BadPolicy(String),
    #[error("unknown candidate id {0}")]
    UnknownCandidate(String),
    #[error(transparent)]
    Chat(#[from] ChatError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Jsonl(#[from] crate::jsonl::JsonlError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterState {
    Pending,
    Kept,
    Dropped,
    Flagged,
}

/// Pipeline step that attached a reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterStage {
    Counterfactual,
    Backtranslation,
    Roundtrip,
    Distance,
}

impl fmt::Display for FilterStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterStage::Counterfactual => "counterfactual",
            FilterStage::Backtranslation => "backtranslation",
            FilterStage::Roundtrip => "roundtrip",
            FilterStage::Distance => "distance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReason {
    pub stage: FilterStage,
    /// Stable machine-readable code, e.g. `label_mismatch`.
    pub code: String,
    pub detail: String,
}

impl FilterReason {
    pub fn new(stage: FilterStage, code: &str, detail: impl Into<String>) -> Self {
        FilterReason {
            stage,
            code: code.to_string(),
            detail: detail.into(),
        }
    }
}

/// A synthetic example moving through the filters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(flatten)]
    pub example: Example,
    pub filter_state: FilterState,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub filter_reasons: Vec<FilterReason>,
}

impl Candidate {
    /// Wrap a synthetic example. Panics if the example has no lineage.
    pub fn new(example: Example) -> Candidate {
        assert!(example.lineage.is_some(), "candidates are synthetic and carry lineage");
        Candidate {
            example,
            filter_state: FilterState::Pending,
            filter_reasons: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.example.id
    }

    pub fn text(&self) -> &str {
        &self.example.text
    }

    pub fn label(&self) -> RiskLabel {
        self.example.label
    }

    pub fn stage(&self) -> SynthesisStage {
        self.example
            .lineage
            .as_ref()
            .map(|l| l.stage)
            .expect("candidate lineage")
    }

    /// Whether a filter should still look at this candidate.
    pub fn is_live(&self) -> bool {
        matches!(self.filter_state, FilterState::Pending | FilterState::Kept)
    }

    fn flag(&mut self, reason: FilterReason) {
        self.filter_state = FilterState::Flagged;
        self.filter_reasons.push(reason);
    }
}
