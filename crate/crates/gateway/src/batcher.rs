//! Coalesces concurrent scoring requests into backend calls of at most
//! `max_batch` texts. A single worker owns the backend; callers wait on a
//! oneshot reply.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::sync::{mpsc, oneshot};
use tokio::time::Instant;
use tracing::{debug, warn};

use juree_core::{batch_score, BackendError, InferenceBackend, ScoreVector};

use crate::config::BatchingConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SubmitError {
    #[error("queue full: {pending} texts pending, limit {limit}")]
    Overloaded { pending: usize, limit: usize },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("batcher stopped")]
    Stopped,
}

struct Job {
    texts: Vec<String>,
    reply: oneshot::Sender<Result<Vec<ScoreVector>, BackendError>>,
}

#[derive(Clone)]
pub struct Batcher {
    tx: mpsc::UnboundedSender<Job>,
    pending: Arc<AtomicUsize>,
    max_queue: usize,
    batches: Arc<AtomicUsize>,
}

impl Batcher {
    /// Spawn the worker on the current tokio runtime.
    pub fn spawn(backend: Arc<dyn InferenceBackend>, config: &BatchingConfig) -> Batcher {
        let (tx, rx) = mpsc::unbounded_channel();
        let pending = Arc::new(AtomicUsize::new(0));
        let batches = Arc::new(AtomicUsize::new(0));
        tokio::spawn(worker(
            rx,
            backend,
            config.max_batch,
            config.window(),
            pending.clone(),
            batches.clone(),
        ));
        Batcher {
            tx,
            pending,
            max_queue: config.max_queue,
            batches,
        }
    }

    /// Texts accepted and not yet answered.
    pub fn pending(&self) -> usize {
        self.pending.load(Ordering::SeqCst)
    }

    /// Coalesced batches handed to the worker so far.
    pub fn batches(&self) -> usize {
        self.batches.load(Ordering::SeqCst)
    }

    pub async fn score(&self, texts: Vec<String>) -> Result<Vec<ScoreVector>, SubmitError> {
        let n = texts.len();
        let reserved = self
            .pending
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |p| {
                (p + n <= self.max_queue).then_some(p + n)
            });
        if let Err(pending) = reserved {
            return Err(SubmitError::Overloaded {
                pending,
                limit: self.max_queue,
            });
        }
        let (reply, rx) = oneshot::channel();
        if self.tx.send(Job { texts, reply }).is_err() {
            self.pending.fetch_sub(n, Ordering::SeqCst);
            return Err(SubmitError::Stopped);
        }
        let out = rx.await.map_err(|_| SubmitError::Stopped)?;
        Ok(out?)
    }
}

async fn worker(
    mut rx: mpsc::UnboundedReceiver<Job>,
    backend: Arc<dyn InferenceBackend>,
    max_batch: usize,
    window: Duration,
    pending: Arc<AtomicUsize>,
    batches: Arc<AtomicUsize>,
) {
    while let Some(first) = rx.recv().await {
        let mut jobs = vec![first];
        let mut size = jobs[0].texts.len();
        let deadline = Instant::now() + window;
        while size < max_batch {
            let next = match rx.try_recv() {
                Ok(job) => Some(job),
                Err(_) if window.is_zero() => None,
                Err(_) => tokio::time::timeout_at(deadline, rx.recv()).await.ok().flatten(),
            };
            match next {
                Some(job) => {
                    size += job.texts.len();
                    jobs.push(job);
                }
                None => break,
            }
        }
        batches.fetch_add(1, Ordering::SeqCst);
        debug!(jobs = jobs.len(), texts = size, "scoring batch");

        let texts: Vec<String> = jobs.iter().flat_map(|j| j.texts.iter().cloned()).collect();
        let b = backend.clone();
        let result = tokio::task::spawn_blocking(move || batch_score(&*b, &texts, max_batch))
            .await
            .unwrap_or_else(|e| Err(BackendError::Unavailable(format!("scoring task failed: {e}"))));
        pending.fetch_sub(size, Ordering::SeqCst);

        match result {
            Ok(scores) => {
                let mut rest = scores.into_iter();
                for job in jobs {
                    let mine: Vec<ScoreVector> = rest.by_ref().take(job.texts.len()).collect();
                    let _ = job.reply.send(Ok(mine));
                }
            }
            Err(e) => {
                warn!(error = %e, "backend failed");
                for job in jobs {
                    let _ = job.reply.send(Err(e.clone()));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use juree_core::testing::CountingBackend;
    use juree_core::LexiconScorer;

    fn cfg(window_ms: u64, max_batch: usize, max_queue: usize) -> BatchingConfig {
        BatchingConfig {
            window_ms,
            max_batch,
            max_queue,
        }
    }

    #[tokio::test]
    async fn large_request_splits_at_max_batch() {
        let backend = Arc::new(CountingBackend::reference());
        let b = Batcher::spawn(backend.clone(), &cfg(2, 128, 4096));
        let texts: Vec<String> = (0..130).map(|i| format!("text {i}")).collect();
        let out = b.score(texts).await.unwrap();
        assert_eq!(out.len(), 130);
        assert_eq!(backend.call_sizes(), vec![128, 2]);
        assert_eq!(b.pending(), 0);
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn concurrent_requests_coalesce_and_keep_order() {
        let backend = Arc::new(CountingBackend::reference().with_delay(Duration::from_millis(20)));
        let b = Batcher::spawn(backend.clone(), &cfg(5, 128, 4096));
        let reference = LexiconScorer::default();
        let words = ["loan", "kill", "weather", "ignore", "lonely", "terrible"];
        let mut handles = Vec::new();
        for i in 0..40 {
            let b = b.clone();
            let text = format!("{} {}", words[i % 6], words[(i / 6) % 6]);
            handles.push(tokio::spawn(async move { (text.clone(), b.score(vec![text]).await.unwrap()) }));
        }
        for h in handles {
            let (text, got) = h.await.unwrap();
            assert_eq!(got, vec![reference.score_text(&text)]);
        }
        assert!(backend.calls() < 40, "expected coalescing, got {} calls", backend.calls());
    }

    #[tokio::test]
    async fn overload_rejected_without_leaking_capacity() {
        let backend = Arc::new(CountingBackend::reference());
        let b = Batcher::spawn(backend, &cfg(0, 8, 10));
        let err = b.score(vec!["x".into(); 11]).await.unwrap_err();
        assert!(matches!(err, SubmitError::Overloaded { limit: 10, .. }));
        assert_eq!(b.pending(), 0);
        assert_eq!(b.score(vec!["x".into(); 10]).await.unwrap().len(), 10);
    }

    #[tokio::test]
    async fn backend_failure_reaches_caller() {
        let backend = Arc::new(CountingBackend::reference().fail_on_call(0));
        let b = Batcher::spawn(backend, &cfg(0, 8, 100));
        assert!(matches!(b.score(vec!["a".into()]).await, Err(SubmitError::Backend(_))));
        assert_eq!(b.pending(), 0);
        assert!(b.score(vec!["a".into()]).await.is_ok());
    }
}
