//! Review queue backed by two JSON-Lines files: the triage items and the
//! dataset that receives decisions. Every label is written to the dataset
//! first, then to the queue; loading reconciles a queue left stale by a crash
//! between the two writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tracing::{info, warn};

use juree_core::corpus::{content_id, CorpusError};
use juree_core::foundry::{commit_review, triage_order, Resolution, ReviewDecision, TriageItem, TriageStatus};
use juree_core::jsonl::{self, JsonlError};
use juree_core::{Dataset, RiskLabel};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("loading triage queue: {0}")]
    Queue(#[from] JsonlError),
    #[error("loading dataset: {0}")]
    Dataset(#[from] CorpusError),
    #[error("writing {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("no triage item {0}")]
    UnknownItem(String),
    #[error("item {id} already labeled {} by {}", .resolution.label, .resolution.reviewer_id)]
    AlreadyLabeled { id: String, resolution: Resolution },
    #[error("candidate {0} is not in the dataset store")]
    NotInDataset(String),
    #[error("persisting decision: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LabelOutcome {
    pub candidate_id: String,
    /// Dataset id after the decision; differs from `candidate_id` on relabel.
    pub id: String,
    pub label: RiskLabel,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_label: Option<RiskLabel>,
    pub reviewer_id: String,
    pub timestamp: String,
    pub status: TriageStatus,
}

pub struct TriageStore {
    queue_path: PathBuf,
    dataset_path: PathBuf,
    items: Vec<TriageItem>,
    dataset: Dataset,
}

impl TriageStore {
    pub fn load(queue_path: impl Into<PathBuf>, dataset_path: impl Into<PathBuf>) -> Result<TriageStore, StoreError> {
        let queue_path = queue_path.into();
        let dataset_path = dataset_path.into();
        let mut items: Vec<TriageItem> = jsonl::read_path(&queue_path)?;
        let dataset = Dataset::load(&dataset_path)?;
        items.sort_by(triage_order);
        let mut store = TriageStore {
            queue_path,
            dataset_path,
            items,
            dataset,
        };
        let fixed = store.reconcile();
        if fixed > 0 {
            info!(fixed, "queue reconciled against dataset");
            store.write_queue()?;
        }
        Ok(store)
    }

    /// Mark queued items whose decision already reached the dataset.
    fn reconcile(&mut self) -> usize {
        let mut fixed = 0;
        for item in self.items.iter_mut().filter(|i| i.status == TriageStatus::Queued) {
            let reviewed = match self.dataset.get(&item.candidate_id) {
                Some(ex) => ex.review.as_ref().map(|r| (ex.label, r)),
                None => self.dataset.examples().iter().find_map(|ex| {
                    let r = ex.review.as_ref()?;
                    (ex.text == item.text && r.prior_label == Some(item.label)).then_some((ex.label, r))
                }),
            };
            if let Some((label, review)) = reviewed {
                item.status = TriageStatus::Labeled;
                item.resolution = Some(Resolution {
                    label,
                    reviewer_id: review.reviewer_id.clone(),
                    timestamp: review.timestamp.clone(),
                });
                fixed += 1;
            }
        }
        fixed
    }

    pub fn items(&self) -> &[TriageItem] {
        &self.items
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn queued(&self) -> usize {
        self.items.iter().filter(|i| i.status == TriageStatus::Queued).count()
    }

    /// Up to `limit` queued items, most uncertain first.
    pub fn next(&self, limit: usize) -> Vec<TriageItem> {
        self.items
            .iter()
            .filter(|i| i.status == TriageStatus::Queued)
            .take(limit)
            .cloned()
            .collect()
    }

    pub fn label(
        &mut self,
        candidate_id: &str,
        label: RiskLabel,
        reviewer_id: &str,
        timestamp: &str,
    ) -> Result<LabelOutcome, LabelError> {
        let idx = self
            .items
            .iter()
            .position(|i| i.candidate_id == candidate_id)
            .ok_or_else(|| LabelError::UnknownItem(candidate_id.to_string()))?;
        if let Some(resolution) = &self.items[idx].resolution {
            return Err(LabelError::AlreadyLabeled {
                id: candidate_id.to_string(),
                resolution: resolution.clone(),
            });
        }
        let Some(example) = self.dataset.get(candidate_id) else {
            return Err(LabelError::NotInDataset(candidate_id.to_string()));
        };
        let prior = example.label;
        let new_id = if label == prior {
            candidate_id.to_string()
        } else {
            content_id(&example.text, label, example.origin)
        };
        let decision = ReviewDecision {
            candidate_id: candidate_id.to_string(),
            label,
            reviewer_id: reviewer_id.to_string(),
            timestamp: timestamp.to_string(),
        };
        let updated = commit_review(&self.dataset, &[decision]).map_err(|e| LabelError::Persist(e.to_string()))?;
        write_atomic(&self.dataset_path, &updated.to_jsonl()).map_err(|e| LabelError::Persist(e.to_string()))?;
        self.dataset = updated;

        let item = &mut self.items[idx];
        item.status = TriageStatus::Labeled;
        item.resolution = Some(Resolution {
            label,
            reviewer_id: reviewer_id.to_string(),
            timestamp: timestamp.to_string(),
        });
        if let Err(e) = self.write_queue() {
            // the dataset already holds the decision; reconcile repairs the queue on load
            warn!(error = %e, "queue write failed after dataset commit");
        }
        Ok(LabelOutcome {
            candidate_id: candidate_id.to_string(),
            id: new_id,
            label,
            prior_label: (label != prior).then_some(prior),
            reviewer_id: reviewer_id.to_string(),
            timestamp: timestamp.to_string(),
            status: TriageStatus::Labeled,
        })
    }

    fn write_queue(&self) -> Result<(), StoreError> {
        write_atomic(&self.queue_path, &jsonl::to_string(&self.items)).map_err(|source| StoreError::Write {
            path: self.queue_path.clone(),
            source,
        })
    }
}

/// Write through a sibling temp file and rename over the target.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use juree_core::corpus::{Example, Lineage, SynthesisStage};
    use juree_core::ScoreVector;

    fn setup(dir: &Path) -> (PathBuf, PathBuf, Vec<String>) {
        let texts = ["fee loan complaint", "lonely loan", "kill the weather"];
        let labels = [RiskLabel::Complaint, RiskLabel::Vulnerable, RiskLabel::Harmful];
        let examples: Vec<Example> = texts
            .iter()
            .zip(labels)
            .map(|(t, l)| Example::synthetic(*t, l, Lineage::new(SynthesisStage::Generated)))
            .collect();
        let ids: Vec<String> = examples.iter().map(|e| e.id.clone()).collect();
        let items: Vec<TriageItem> = examples
            .iter()
            .zip([0.6, 0.9, 0.75])
            .map(|(e, u)| TriageItem {
                candidate_id: e.id.clone(),
                text: e.text.clone(),
                label: e.label,
                scores: ScoreVector::new([0.5; 6]).unwrap(),
                uncertainty: u,
                proposed_label: RiskLabel::BankingRelated,
                status: TriageStatus::Queued,
                resolution: None,
            })
            .collect();
        let q = dir.join("queue.jsonl");
        let d = dir.join("dataset.jsonl");
        jsonl::write_path(&q, &items).unwrap();
        Dataset::from_examples(examples).unwrap().save(&d).unwrap();
        (q, d, ids)
    }

    #[test]
    fn next_is_ordered_and_limited() {
        let dir = tempfile::tempdir().unwrap();
        let (q, d, ids) = setup(dir.path());
        let store = TriageStore::load(q, d).unwrap();
        let next = store.next(10);
        assert_eq!(next.len(), 3);
        assert!(next.windows(2).all(|w| w[0].uncertainty >= w[1].uncertainty));
        assert_eq!(next[0].candidate_id, ids[1]);
        assert_eq!(store.next(1).len(), 1);
    }

    #[test]
    fn label_persists_and_rejects_second_label() {
        let dir = tempfile::tempdir().unwrap();
        let (q, d, ids) = setup(dir.path());
        let mut store = TriageStore::load(&q, &d).unwrap();
        let out = store.label(&ids[0], RiskLabel::BankingRelated, "rev", "2024-01-01T00:00:00Z").unwrap();
        assert_eq!(out.prior_label, Some(RiskLabel::Complaint));
        assert_ne!(out.id, ids[0]);
        assert!(matches!(
            store.label(&ids[0], RiskLabel::Complaint, "rev2", "t"),
            Err(LabelError::AlreadyLabeled { .. })
        ));
        assert_eq!(store.label("nope", RiskLabel::Complaint, "rev", "t"), Err(LabelError::UnknownItem("nope".into())));

        let on_disk = Dataset::load(&d).unwrap();
        let ex = on_disk.get(&out.id).unwrap();
        assert_eq!(ex.label, RiskLabel::BankingRelated);
        let review = ex.review.as_ref().unwrap();
        assert_eq!((review.reviewer_id.as_str(), review.prior_label), ("rev", Some(RiskLabel::Complaint)));

        let reloaded = TriageStore::load(&q, &d).unwrap();
        assert_eq!(reloaded.queued(), 2);
        assert!(reloaded.next(10).iter().all(|i| i.candidate_id != ids[0]));
    }

    #[test]
    fn confirm_keeps_id() {
        let dir = tempfile::tempdir().unwrap();
        let (q, d, ids) = setup(dir.path());
        let mut store = TriageStore::load(&q, &d).unwrap();
        let out = store.label(&ids[2], RiskLabel::Harmful, "rev", "t").unwrap();
        assert_eq!(out.id, ids[2]);
        assert_eq!(out.prior_label, None);
        assert!(store.dataset().get(&ids[2]).unwrap().review.is_some());
    }

    #[test]
    fn stale_queue_is_reconciled_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let (q, d, ids) = setup(dir.path());
        let before = std::fs::read(&q).unwrap();
        let mut store = TriageStore::load(&q, &d).unwrap();
        store.label(&ids[0], RiskLabel::OffTopic, "rev", "t1").unwrap();
        store.label(&ids[2], RiskLabel::Harmful, "rev", "t2").unwrap();
        // simulate a crash after the dataset write but before the queue write
        std::fs::write(&q, before).unwrap();
        let reloaded = TriageStore::load(&q, &d).unwrap();
        assert_eq!(reloaded.queued(), 1);
        let r = reloaded.items().iter().find(|i| i.candidate_id == ids[0]).unwrap();
        assert_eq!(r.resolution.as_ref().unwrap().label, RiskLabel::OffTopic);
        let on_disk: Vec<TriageItem> = jsonl::read_path(&q).unwrap();
        assert_eq!(on_disk.iter().filter(|i| i.status == TriageStatus::Queued).count(), 1);
    }

    #[test]
    fn missing_from_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (q, d, ids) = setup(dir.path());
        Dataset::empty().save(&d).unwrap();
        let mut store = TriageStore::load(&q, &d).unwrap();
        assert_eq!(
            store.label(&ids[0], RiskLabel::Harmful, "rev", "t"),
            Err(LabelError::NotInDataset(ids[0].clone()))
        );
    }
}
