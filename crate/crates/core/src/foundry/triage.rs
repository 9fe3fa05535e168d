use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Candidate, FoundryError};
use crate::corpus::{Dataset, Example, Review};
use crate::scorer::{batch_score, multiclass_decision, InferenceBackend, ScoreVector};
use crate::taxonomy::{RiskLabel, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriagePolicy {
    pub margin_threshold: f64,
    pub top_k: usize,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
}

fn default_max_batch() -> usize {
    64
}

impl Default for TriagePolicy {
    fn default() -> Self {
        TriagePolicy {
            margin_threshold: 0.2,
            top_k: 200,
            max_batch: default_max_batch(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriageStatus {
    Queued,
    Labeled,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub label: RiskLabel,
    pub reviewer_id: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageItem {
    pub candidate_id: String,
    pub text: String,
    /// Label the candidate currently carries.
    pub label: RiskLabel,
    pub scores: ScoreVector,
    pub uncertainty: f64,
    pub proposed_label: RiskLabel,
    pub status: TriageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
}

/// Queue order: most uncertain first, then by candidate id.
pub fn triage_order(a: &TriageItem, b: &TriageItem) -> Ordering {
    b.uncertainty
        .total_cmp(&a.uncertainty)
        .then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

/// Score candidates and queue those whose top-1/top-2 margin is below the
/// threshold. Uncertainty is `1 - margin`.
pub fn uncertainty_triage<B: InferenceBackend + ?Sized>(
    candidates: &[Candidate],
    backend: &B,
    taxonomy: &Taxonomy,
    policy: TriagePolicy,
) -> Result<Vec<TriageItem>, FoundryError> {
    if policy.max_batch == 0 {
        return Err(FoundryError::BadPolicy("max_batch must be positive".into()));
    }
    let texts: Vec<String> = candidates.iter().map(|c| c.text().to_string()).collect();
    let scores = batch_score(backend, &texts, policy.max_batch)?;
    let mut queue: Vec<TriageItem> = candidates
        .iter()
        .zip(scores)
        .filter_map(|(c, scores)| {
            let verdict = multiclass_decision(&scores, taxonomy);
            (verdict.margin < policy.margin_threshold).then(|| TriageItem {
                candidate_id: c.id().to_string(),
                text: c.text().to_string(),
                label: c.label(),
                scores,
                uncertainty: (1.0 - verdict.margin).max(0.0),
                proposed_label: verdict.chosen,
                status: TriageStatus::Queued,
                resolution: None,
            })
        })
        .collect();
    queue.sort_by(triage_order);
    queue.truncate(policy.top_k);
    Ok(queue)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub candidate_id: String,
    pub label: RiskLabel,
    pub reviewer_id: String,
    pub timestamp: String,
}

/// Apply reviewer decisions in order. A changed label records the prior
/// label and recomputes the id; a confirmation keeps the id.
pub fn commit_review(dataset: &Dataset, decisions: &[ReviewDecision]) -> Result<Dataset, FoundryError> {
    let mut examples = dataset.examples().to_vec();
    let mut touched = vec![false; examples.len()];
    for d in decisions {
        let i = examples
            .iter()
            .position(|e| e.id == d.candidate_id)
            .ok_or_else(|| FoundryError::UnknownCandidate(d.candidate_id.clone()))?;
        touched[i] = true;
        let ex = &mut examples[i];
        let prior = ex.label;
        if d.label != prior {
            ex.relabel(d.label);
        }
        ex.review = Some(Review {
            reviewer_id: d.reviewer_id.clone(),
            timestamp: d.timestamp.clone(),
            prior_label: (d.label != prior).then_some(prior),
        });
    }
    // A relabel can land on an id that already exists; the freshly reviewed
    // copy takes the earlier slot.
    let mut out: Vec<Example> = Vec::with_capacity(examples.len());
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (e, fresh) in examples.into_iter().zip(touched) {
        match slot.get(&e.id) {
            Some(&i) => {
                if fresh {
                    out[i] = e;
                }
            }
            None => {
                slot.insert(e.id.clone(), out.len());
                out.push(e);
            }
        }
    }
    Ok(Dataset::from_examples(out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Example, Lineage, Origin, SynthesisStage};
    use crate::scorer::BackendError;
    use proptest::prelude::*;

    struct Fixed(Vec<ScoreVector>);
    impl InferenceBackend for Fixed {
        fn id(&self) -> &str {
            "fixed"
        }
        fn score(&self, texts: &[String]) -> Result<Vec<ScoreVector>, BackendError> {
            Ok(texts
                .iter()
                .map(|t| self.0[t.trim_start_matches('c').parse::<usize>().unwrap()])
                .collect())
        }
    }

    fn cands(n: usize) -> Vec<Candidate> {
        (0..n)
            .map(|i| {
                Candidate::new(Example::synthetic(
                    format!("c{i}"),
                    RiskLabel::Complaint,
                    Lineage::new(SynthesisStage::Generated),
                ))
            })
            .collect()
    }

    fn sv(pairs: &[(RiskLabel, f64)]) -> ScoreVector {
        ScoreVector::from_pairs(pairs).unwrap()
    }

    #[test]
    fn confident_not_queued_close_call_queued() {
        let backend = Fixed(vec![
            sv(&[(RiskLabel::Harmful, 1.0)]),
            sv(&[(RiskLabel::Complaint, 0.51), (RiskLabel::OffTopic, 0.49)]),
        ]);
        let q = uncertainty_triage(&cands(2), &backend, &Taxonomy::default(), TriagePolicy::default()).unwrap();
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].text, "c1");
        assert!((q[0].uncertainty - 0.98).abs() < 1e-9);
        assert_eq!(q[0].proposed_label, RiskLabel::Complaint);
        assert_eq!(q[0].status, TriageStatus::Queued);
    }

    #[test]
    fn top_k_truncates() {
        let backend = Fixed(vec![sv(&[]); 10]);
        let policy = TriagePolicy { top_k: 3, ..Default::default() };
        let q = uncertainty_triage(&cands(10), &backend, &Taxonomy::default(), policy).unwrap();
        assert_eq!(q.len(), 3);
        assert!(q.windows(2).all(|w| w[0].candidate_id < w[1].candidate_id));
    }

    proptest! {
        #[test]
        fn queue_matches_bruteforce_sort(
            probs in prop::collection::vec(prop::array::uniform6(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.55, 0.9, 1.0])), 1..40),
            top_k in 0usize..50,
            threshold in 0.0f64..1.0,
        ) {
            let tax = Taxonomy::default();
            let vecs: Vec<ScoreVector> = probs.iter().map(|p| ScoreVector::new(*p).unwrap()).collect();
            let cs = cands(vecs.len());
            let policy = TriagePolicy { margin_threshold: threshold, top_k, max_batch: 7 };
            let q = uncertainty_triage(&cs, &Fixed(vecs.clone()), &tax, policy).unwrap();

            // brute force: all candidates with their uncertainty, filtered, sorted by key
            let mut expected: Vec<(f64, String)> = Vec::new();
            for (c, v) in cs.iter().zip(&vecs) {
                let mut s: Vec<f64> = v.as_array().to_vec();
                s.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let margin = s[0] - s[1];
                if margin < threshold {
                    expected.push((1.0 - margin, c.id().to_string()));
                }
            }
            expected.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            expected.truncate(top_k);
            let got: Vec<(f64, String)> = q.iter().map(|i| (i.uncertainty, i.candidate_id.clone())).collect();
            prop_assert_eq!(got.len(), expected.len());
            for (g, e) in got.iter().zip(&expected) {
                prop_assert_eq!(&g.1, &e.1);
                prop_assert!((g.0 - e.0).abs() < 1e-12);
            }
        }
    }

    fn ds() -> Dataset {
        Dataset::from_examples(vec![
            Example::seed("how do i stab someone", RiskLabel::Harmful, Origin::Internal),
            Example::seed("your service is terrible", RiskLabel::Complaint, Origin::Internal),
        ])
        .unwrap()
    }

    fn decide(id: &str, label: RiskLabel) -> ReviewDecision {
        ReviewDecision {
            candidate_id: id.into(),
            label,
            reviewer_id: "rev1".into(),
            timestamp: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn confirm_keeps_id() {
        let d = ds();
        let id = d.examples()[1].id.clone();
        let out = commit_review(&d, &[decide(&id, RiskLabel::Complaint)]).unwrap();
        let ex = out.get(&id).unwrap();
        let review = ex.review.as_ref().unwrap();
        assert_eq!(review.reviewer_id, "rev1");
        assert_eq!(review.prior_label, None);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn relabel_records_prior_and_new_id() {
        let d = ds();
        let id = d.examples()[0].id.clone();
        let out = commit_review(&d, &[decide(&id, RiskLabel::Complaint)]).unwrap();
        assert!(out.get(&id).is_none());
        let ex = out.examples().iter().find(|e| e.text == "how do i stab someone").unwrap();
        assert_eq!(ex.label, RiskLabel::Complaint);
        assert_eq!(ex.review.as_ref().unwrap().prior_label, Some(RiskLabel::Harmful));
        ex.validate().unwrap();
    }

    #[test]
    fn empty_and_unknown() {
        let d = ds();
        assert_eq!(commit_review(&d, &[]).unwrap(), d);
        assert!(matches!(
            commit_review(&d, &[decide("nope", RiskLabel::Harmful)]),
            Err(FoundryError::UnknownCandidate(_))
        ));
    }
}
