//! Scoring backends and the aggregation from per-class probabilities to
//! binary and multiclass verdicts.
//!
//! A [`ScoreVector`] holds six independent per-class probabilities (one per
//! binary head); they are not required to sum to one.

mod lexicon;
mod remote;

use std::fmt;
use std::sync::Arc;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::taxonomy::{PerClass, RiskLabel, Taxonomy, NUM_CLASSES};

pub use lexicon::{tokenize, Lexicon, LexiconScorer};
pub use remote::{RemoteBackend, RemoteConfig, ScoreRequest, ScoreResponse};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("invalid score vector: {0}")]
    InvalidScores(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("batch [{start}, {end}) failed: {source}")]
    Chunk {
        start: usize,
        end: usize,
        #[source]
        source: Box<BackendError>,
    },
}

/// Six per-class probabilities in canonical order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreVector {
    probs: [f64; NUM_CLASSES],
}

impl ScoreVector {
    /// Build from canonical-order probabilities, each in `[0, 1]`.
    pub fn new(probs: [f64; NUM_CLASSES]) -> Result<ScoreVector, BackendError> {
        for (label, p) in RiskLabel::ALL.iter().zip(probs) {
            if !(0.0..=1.0).contains(&p) {
                return Err(BackendError::InvalidScores(format!(
                    "{label} probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(ScoreVector { probs })
    }

    pub fn from_pairs(pairs: &[(RiskLabel, f64)]) -> Result<ScoreVector, BackendError> {
        let mut probs = [0.0; NUM_CLASSES];
        for &(label, p) in pairs {
            probs[label.index()] = p;
        }
        Self::new(probs)
    }

    pub fn get(&self, label: RiskLabel) -> f64 {
        self.probs[label.index()]
    }

    pub fn as_array(&self) -> &[f64; NUM_CLASSES] {
        &self.probs
    }

    pub fn iter(&self) -> impl Iterator<Item = (RiskLabel, f64)> + '_ {
        RiskLabel::ALL.into_iter().zip(self.probs.iter().copied())
    }
}

impl Serialize for ScoreVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PerClass(self.probs).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ScoreVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ScoreVisitor;

        impl<'de> Visitor<'de> for ScoreVisitor {
            type Value = ScoreVector;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object with one probability per class")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<ScoreVector, A::Error> {
                let mut probs = [None; NUM_CLASSES];
                while let Some((name, p)) = map.next_entry::<String, f64>()? {
                    let label: RiskLabel = name.parse().map_err(de::Error::custom)?;
                    if probs[label.index()].replace(p).is_some() {
                        return Err(de::Error::custom(format!("duplicate class {label}")));
                    }
                }
                let mut out = [0.0; NUM_CLASSES];
                for (label, p) in RiskLabel::ALL.iter().zip(probs) {
                    out[label.index()] =
                        p.ok_or_else(|| de::Error::custom(format!("missing class {label}")))?;
                }
                ScoreVector::new(out).map_err(de::Error::custom)
            }
        }

        deserializer.deserialize_map(ScoreVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Safe,
    Unsafe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryVerdict {
    pub in_scope_prob: f64,
    pub out_scope_prob: f64,
    pub decision: Decision,
    pub trigger_class: RiskLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MulticlassVerdict {
    pub chosen: RiskLabel,
    pub margin: f64,
}

/// In-scope probability is the banking_related probability; out-of-scope
/// probability is the max over the five out-of-scope classes. Ties at the
/// max go to the most severe class, and the input is unsafe when the max
/// reaches (`>=`) the trigger class's threshold.
pub fn binary_decision(scores: &ScoreVector, taxonomy: &Taxonomy) -> BinaryVerdict {
    let mut trigger = taxonomy.severity_order()[0];
    let mut out = scores.get(trigger);
    for &label in &taxonomy.severity_order()[1..] {
        let p = scores.get(label);
        if p > out {
            out = p;
            trigger = label;
        }
    }
    let decision = if out >= taxonomy.threshold(trigger) {
        Decision::Unsafe
    } else {
        Decision::Safe
    };
    BinaryVerdict {
        in_scope_prob: scores.get(RiskLabel::BankingRelated),
        out_scope_prob: out,
        decision,
        trigger_class: trigger,
    }
}

/// Tie-break priority for the multiclass argmax: banking_related first, then
/// the out-of-scope classes by severity.
fn argmax_priority(taxonomy: &Taxonomy) -> [RiskLabel; NUM_CLASSES] {
    let mut order = [RiskLabel::BankingRelated; NUM_CLASSES];
    order[1..].copy_from_slice(taxonomy.severity_order());
    order
}

/// Global argmax over all six probabilities; `margin` is top-1 minus top-2.
pub fn multiclass_decision(scores: &ScoreVector, taxonomy: &Taxonomy) -> MulticlassVerdict {
    let order = argmax_priority(taxonomy);
    let mut chosen = order[0];
    for &label in &order[1..] {
        if scores.get(label) > scores.get(chosen) {
            chosen = label;
        }
    }
    let top1 = scores.get(chosen);
    let top2 = scores
        .iter()
        .filter(|(l, _)| *l != chosen)
        .map(|(_, p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    MulticlassVerdict {
        chosen,
        margin: top1 - top2,
    }
}

/// Whether a backend may be called from several threads at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    Serialized,
}

/// A scoring model. `score` returns one vector per text, in input order, and
/// must be deterministic for a fixed configuration.
pub trait InferenceBackend: Send + Sync {
    fn id(&self) -> &str;

    fn score(&self, texts: &[String]) -> Result<Vec<ScoreVector>, BackendError>;

    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }

    fn health(&self) -> Result<(), BackendError> {
        Ok(())
    }
}

impl<B: InferenceBackend + ?Sized> InferenceBackend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn score(&self, texts: &[String]) -> Result<Vec<ScoreVector>, BackendError> {
        (**self).score(texts)
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
    fn health(&self) -> Result<(), BackendError> {
        (**self).health()
    }
}

impl<B: InferenceBackend + ?Sized> InferenceBackend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn score(&self, texts: &[String]) -> Result<Vec<ScoreVector>, BackendError> {
        (**self).score(texts)
    }
    fn concurrency(&self) -> Concurrency {
        (**self).concurrency()
    }
    fn health(&self) -> Result<(), BackendError> {
        (**self).health()
    }
}

/// Score `texts` in backend calls of at most `max_batch` texts each.
pub fn batch_score<B: InferenceBackend + ?Sized>(
    backend: &B,
    texts: &[String],
    max_batch: usize,
) -> Result<Vec<ScoreVector>, BackendError> {
    assert!(max_batch >= 1, "max_batch must be positive");
    let mut out = Vec::with_capacity(texts.len());
    for (i, chunk) in texts.chunks(max_batch).enumerate() {
        let start = i * max_batch;
        let end = start + chunk.len();
        let wrap = |source| BackendError::Chunk {
            start,
            end,
            source: Box::new(source),
        };
        let scores = backend.score(chunk).map_err(wrap)?;
        if scores.len() != chunk.len() {
            return Err(wrap(BackendError::Protocol(format!(
                "expected {} score vectors, got {}",
                chunk.len(),
                scores.len()
            ))));
        }
        out.extend(scores);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::CountingBackend;
    use proptest::prelude::*;

    fn sv(pairs: &[(RiskLabel, f64)]) -> ScoreVector {
        ScoreVector::from_pairs(pairs).unwrap()
    }

    use RiskLabel::*;

    #[test]
    fn binary_worked_example() {
        let t = Taxonomy::default();
        let s = sv(&[
            (BankingRelated, 0.40),
            (Harmful, 0.20),
            (OffTopic, 0.10),
            (SystemAttack, 0.70),
            (Vulnerable, 0.05),
            (Complaint, 0.30),
        ]);
        let b = binary_decision(&s, &t);
        assert_eq!(b.in_scope_prob, 0.40);
        assert_eq!(b.out_scope_prob, 0.70);
        assert_eq!(b.decision, Decision::Unsafe);
        assert_eq!(b.trigger_class, SystemAttack);

        let m = multiclass_decision(&s, &t);
        assert_eq!(m.chosen, SystemAttack);
        assert!((m.margin - 0.30).abs() < 1e-12);
    }

    #[test]
    fn binary_identity_and_tie() {
        let t = Taxonomy::default();
        let b = binary_decision(&sv(&[(BankingRelated, 1.0)]), &t);
        assert_eq!((b.in_scope_prob, b.out_scope_prob, b.decision), (1.0, 0.0, Decision::Safe));

        let b = binary_decision(&sv(&[(Harmful, 0.5), (SystemAttack, 0.5)]), &t);
        assert_eq!(b.trigger_class, Harmful);
        assert_eq!(b.decision, Decision::Unsafe);
    }

    #[test]
    fn per_class_threshold_applies_to_trigger() {
        let t = Taxonomy::default().with_threshold(Complaint, 0.8).unwrap();
        let b = binary_decision(&sv(&[(Complaint, 0.7)]), &t);
        assert_eq!(b.trigger_class, Complaint);
        assert_eq!(b.decision, Decision::Safe);
    }

    #[test]
    fn multiclass_banking_wins() {
        let t = Taxonomy::default();
        let m = multiclass_decision(&sv(&[(BankingRelated, 0.9), (Harmful, 0.2), (Complaint, 0.1)]), &t);
        assert_eq!(m.chosen, BankingRelated);
        assert!((m.margin - 0.7).abs() < 1e-12);
    }

    #[test]
    fn multiclass_ties() {
        let t = Taxonomy::default();
        let all_zero = multiclass_decision(&sv(&[]), &t);
        assert_eq!(all_zero.chosen, BankingRelated);
        assert_eq!(all_zero.margin, 0.0);
        let m = multiclass_decision(&sv(&[(OffTopic, 0.4), (Vulnerable, 0.4)]), &t);
        assert_eq!(m.chosen, Vulnerable);
    }

    #[test]
    fn score_vector_validation_and_serde() {
        assert!(ScoreVector::new([0.0, 1.1, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(ScoreVector::new([f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0]).is_err());
        let s = sv(&[(Harmful, 0.5)]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(
            json,
            r#"{"banking_related":0.0,"harmful":0.5,"off_topic":0.0,"system_attack":0.0,"vulnerable":0.0,"complaint":0.0}"#
        );
        assert_eq!(serde_json::from_str::<ScoreVector>(&json).unwrap(), s);
        assert!(serde_json::from_str::<ScoreVector>(r#"{"harmful":0.5}"#).is_err());
    }

    #[test]
    fn batch_arithmetic() {
        let backend = CountingBackend::reference();
        let texts: Vec<String> = (0..130).map(|i| format!("text {i}")).collect();
        let out = batch_score(&backend, &texts, 128).unwrap();
        assert_eq!(out.len(), 130);
        assert_eq!(backend.call_sizes(), vec![128, 2]);

        let backend = CountingBackend::reference();
        assert!(batch_score(&backend, &[], 128).unwrap().is_empty());
        assert_eq!(backend.calls(), 0);
    }

    #[test]
    fn batch_error_carries_chunk_range() {
        let backend = CountingBackend::reference().fail_on_call(1);
        let texts: Vec<String> = (0..10).map(|i| format!("t{i}")).collect();
        let err = batch_score(&backend, &texts, 4).unwrap_err();
        assert!(matches!(err, BackendError::Chunk { start: 4, end: 8, .. }), "{err:?}");
    }

    fn arb_scores() -> impl Strategy<Value = ScoreVector> {
        proptest::array::uniform6(0.0f64..=1.0).prop_map(|p| ScoreVector::new(p).unwrap())
    }

    proptest! {
        #[test]
        fn batching_preserves_order(n in 0usize..40, max_batch in 1usize..9) {
            let backend = CountingBackend::reference();
            let texts: Vec<String> = (0..n).map(|i| "bomb ".repeat(i % 5) + "account").collect();
            let single = backend.score(&texts).unwrap();
            let batched = batch_score(&backend, &texts, max_batch).unwrap();
            prop_assert_eq!(single, batched);
        }

        #[test]
        fn out_scope_is_monotone(s in arb_scores(), which in 0usize..5, bump in 0.0f64..1.0) {
            let t = Taxonomy::default();
            let label = RiskLabel::OUT_OF_SCOPE[which];
            let mut probs = *s.as_array();
            probs[label.index()] = (probs[label.index()] + bump).min(1.0);
            let raised = ScoreVector::new(probs).unwrap();
            prop_assert!(binary_decision(&raised, &t).out_scope_prob >= binary_decision(&s, &t).out_scope_prob);
        }

        #[test]
        fn argmax_invariant_under_monotone_map(s in arb_scores()) {
            let t = Taxonomy::default();
            let mapped = s.as_array().map(|p| p * p * 0.5 + 0.25);
            let mapped = ScoreVector::new(mapped).unwrap();
            prop_assert_eq!(multiclass_decision(&s, &t).chosen, multiclass_decision(&mapped, &t).chosen);
        }

        #[test]
        fn binary_and_multiclass_agree_on_scope(s in arb_scores()) {
            let t = Taxonomy::default();
            let m = multiclass_decision(&s, &t);
            let b = binary_decision(&s, &t);
            prop_assert!(m.margin >= 0.0);
            if m.chosen == RiskLabel::BankingRelated {
                prop_assert!(b.in_scope_prob >= b.out_scope_prob);
            }
        }
    }
}
