//! Examples, datasets, provenance and stratified splitting.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::taxonomy::{PerClass, RiskLabel, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("record {index}: empty text")]
    EmptyText { index: usize },
    #[error("record {index}: {source}")]
    UnknownLabel {
        index: usize,
        #[source]
        source: TaxonomyError,
    },
    #[error("duplicate example id {0}")]
    DuplicateId(String),
    #[error("example {id}: id does not match content hash {expected}")]
    IdMismatch { id: String, expected: String },
    #[error("example {id}: {origin} examples {rule}")]
    LineageMismatch {
        id: String,
        origin: Origin,
        rule: &'static str,
    },
    #[error("class {label} has {count} example(s), at least 2 are needed to split")]
    TooFewExamples { label: RiskLabel, count: usize },
    #[error("test fraction {0} must be strictly between 0 and 1")]
    BadFraction(f64),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// Where an example came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Internal,
    External,
    Synthetic,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Internal => "internal",
            Origin::External => "external",
            Origin::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which synthetic-pipeline step produced an example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthesisStage {
    Generated,
    Counterfactual,
    Augmented,
    Backtranslated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recipe_id: Option<String>,
    pub stage: SynthesisStage,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplar_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<String>,
}

impl Lineage {
    pub fn new(stage: SynthesisStage) -> Self {
        Lineage {
            parent_id: None,
            recipe_id: None,
            stage,
            exemplar_ids: Vec::new(),
            pivot: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub reviewer_id: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_label: Option<RiskLabel>,
}

/// First 16 hex chars of SHA-256 over the JSON array `[text, label, origin]`.
pub fn content_id(text: &str, label: RiskLabel, origin: Origin) -> String {
    let key = serde_json::to_string(&(text, label.as_str(), origin.as_str()))
        .expect("strings serialize");
    let digest = Sha256::digest(key.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: RiskLabel,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<Review>,
}

impl Example {
    /// Build a seed (internal/external) example.
    pub fn seed(text: impl Into<String>, label: RiskLabel, origin: Origin) -> Example {
        let text = text.into();
        Example {
            id: content_id(&text, label, origin),
            text,
            label,
            origin,
            lineage: None,
            split: None,
            review: None,
        }
    }

    /// Build a synthetic example with its lineage.
    pub fn synthetic(text: impl Into<String>, label: RiskLabel, lineage: Lineage) -> Example {
        let text = text.into();
        Example {
            id: content_id(&text, label, Origin::Synthetic),
            text,
            label,
            origin: Origin::Synthetic,
            lineage: Some(lineage),
            split: None,
            review: None,
        }
    }

    /// Change the label, recomputing the content id.
    pub fn relabel(&mut self, label: RiskLabel) {
        self.label = label;
        self.id = content_id(&self.text, label, self.origin);
    }

    /// Check the id and lineage invariants.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let expected = content_id(&self.text, self.label, self.origin);
        if self.id != expected {
            return Err(CorpusError::IdMismatch {
                id: self.id.clone(),
                expected,
            });
        }
        match (self.origin, &self.lineage) {
            (Origin::Synthetic, None) => Err(CorpusError::LineageMismatch {
                id: self.id.clone(),
                origin: self.origin,
                rule: "must carry lineage",
            }),
            (Origin::Internal | Origin::External, Some(_)) => Err(CorpusError::LineageMismatch {
                id: self.id.clone(),
                origin: self.origin,
                rule: "must not carry lineage",
            }),
            _ => Ok(()),
        }
    }
}

/// Raw input row for [`ingest`]. External labels must already be mapped
/// onto the taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub text: String,
    pub label: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lineage: Option<Lineage>,
}

impl IngestRecord {
    pub fn new(text: impl Into<String>, label: impl Into<String>, origin: Origin) -> Self {
        IngestRecord {
            text: text.into(),
            label: label.into(),
            origin,
            lineage: None,
        }
    }
}

/// An ordered set of examples with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    examples: Vec<Example>,
    counts: PerClass<usize>,
}

impl Dataset {
    pub fn empty() -> Dataset {
        Dataset::default()
    }

    /// Validate and wrap examples. Fails on duplicate ids or broken invariants.
    pub fn from_examples(examples: Vec<Example>) -> Result<Dataset, CorpusError> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            ex.validate()?;
            if !seen.insert(ex.id.as_str()) {
                return Err(CorpusError::DuplicateId(ex.id.clone()));
            }
        }
        Ok(Self::from_unique(examples))
    }

    fn from_unique(examples: Vec<Example>) -> Dataset {
        let mut counts = PerClass::splat(0usize);
        for ex in &examples {
            counts.0[ex.label.index()] += 1;
        }
        Dataset { examples, counts }
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<Example> {
        self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn counts(&self) -> &PerClass<usize> {
        &self.counts
    }

    pub fn count(&self, label: RiskLabel) -> usize {
        self.counts.get(label)
    }

    pub fn get(&self, id: &str) -> Option<&Example> {
        self.examples.iter().find(|e| e.id == id)
    }

    pub fn texts(&self) -> Vec<String> {
        self.examples.iter().map(|e| e.text.clone()).collect()
    }

    pub fn labels(&self) -> Vec<RiskLabel> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn to_jsonl(&self) -> String {
        jsonl::to_string(&self.examples)
    }

    pub fn read_jsonl(reader: impl std::io::BufRead) -> Result<Dataset, CorpusError> {
        Self::from_examples(jsonl::read(reader)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
        Self::from_examples(jsonl::read_path(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        Ok(jsonl::write_path(path, &self.examples)?)
    }
}

/// Validate labels, compute ids and collapse exact duplicates (first wins).
pub fn ingest(records: &[IngestRecord], taxonomy: &Taxonomy) -> Result<Dataset, CorpusError> {
    let mut examples = Vec::with_capacity(records.len());
    let mut seen = HashSet::new();
    for (index, rec) in records.iter().enumerate() {
        if rec.text.trim().is_empty() {
            return Err(CorpusError::EmptyText { index });
        }
        let label = taxonomy
            .validate_label(&rec.label)
            .map_err(|source| CorpusError::UnknownLabel { index, source })?
            .name;
        let example = Example {
            id: content_id(&rec.text, label, rec.origin),
            text: rec.text.clone(),
            label,
            origin: rec.origin,
            lineage: rec.lineage.clone(),
            split: None,
            review: None,
        };
        example.validate()?;
        if seen.insert(example.id.clone()) {
            examples.push(example);
        }
    }
    Ok(Dataset::from_unique(examples))
}

/// Number of test examples for a class of size `n`: `round(fraction * n)`,
/// clamped so both sides keep at least one example.
pub fn test_allocation(n: usize, test_fraction: f64) -> usize {
    if n < 2 {
        return 0;
    }
    let k = (test_fraction * n as f64).round() as usize;
    k.clamp(1, n - 1)
}

/// Per-class seeded shuffle, then prefix-take into the test side.
///
/// Within a class, examples are first sorted by id so the split depends only
/// on the dataset's content and the seed. Output datasets keep input order.
pub fn stratified_split(
    dataset: &Dataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    for (label, count) in dataset.counts().iter() {
        if count == 1 {
            return Err(CorpusError::TooFewExamples { label, count });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_ids: HashSet<&str> = HashSet::new();
    for label in RiskLabel::ALL {
        let mut ids: Vec<&str> = dataset
            .examples
            .iter()
            .filter(|e| e.label == label)
            .map(|e| e.id.as_str())
            .collect();
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let k = test_allocation(ids.len(), test_fraction);
        test_ids.extend(&ids[..k]);
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for ex in &dataset.examples {
        let mut ex = ex.clone();
        if test_ids.contains(ex.id.as_str()) {
            ex.split = Some(Split::Test);
            test.push(ex);
        } else {
            ex.split = Some(Split::Train);
            train.push(ex);
        }
    }
    Ok((Dataset::from_unique(train), Dataset::from_unique(test)))
}

/// Union by id. On collision the reviewed copy wins if exactly one copy is
/// reviewed, otherwise `a`'s copy is kept.
pub fn merge(a: &Dataset, b: &Dataset) -> Dataset {
    let mut examples = a.examples.clone();
    let mut index: HashMap<String, usize> = examples
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id.clone(), i))
        .collect();
    for ex in &b.examples {
        match index.get(&ex.id) {
            Some(&i) => {
                if examples[i].review.is_none() && ex.review.is_some() {
                    examples[i] = ex.clone();
                }
            }
            None => {
                index.insert(ex.id.clone(), examples.len());
                examples.push(ex.clone());
            }
        }
    }
    Dataset::from_unique(examples)
}
