//! HTTP client for an out-of-process scoring service.
//!
//! Wire protocol: `POST {base}/score` with `{"texts": [...]}`, answered by
//! `{"order": [six class names], "scores": [[six floats], ...]}` where row
//! `i` scores `texts[i]` and columns follow `order`.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{BackendError, Concurrency, InferenceBackend, ScoreVector};
use crate::taxonomy::{RiskLabel, NUM_CLASSES};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub order: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreResponse {
    /// Encode vectors in canonical column order.
    pub fn from_vectors(vectors: &[ScoreVector]) -> ScoreResponse {
        ScoreResponse {
            order: RiskLabel::ALL.iter().map(|l| l.as_str().to_string()).collect(),
            scores: vectors.iter().map(|v| v.as_array().to_vec()).collect(),
        }
    }

    /// Decode rows, remapping columns from `order` onto canonical order.
    pub fn into_vectors(self) -> Result<Vec<ScoreVector>, BackendError> {
        if self.order.len() != NUM_CLASSES {
            return Err(BackendError::Protocol(format!(
                "order lists {} classes, expected {NUM_CLASSES}",
                self.order.len()
            )));
        }
        let mut columns = [usize::MAX; NUM_CLASSES];
        for (col, name) in self.order.iter().enumerate() {
            let label: RiskLabel = name
                .parse()
                .map_err(|e| BackendError::Protocol(format!("order: {e}")))?;
            if columns[label.index()] != usize::MAX {
                return Err(BackendError::Protocol(format!("order repeats {label}")));
            }
            columns[label.index()] = col;
        }
        self.scores
            .into_iter()
            .enumerate()
            .map(|(row, values)| {
                if values.len() != NUM_CLASSES {
                    return Err(BackendError::Protocol(format!(
                        "row {row} has {} values",
                        values.len()
                    )));
                }
                ScoreVector::new(columns.map(|c| values[c]))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub backoff: Duration,
    pub bearer_token: Option<String>,
    pub serialized: bool,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(10),
            retries: 2,
            backoff: Duration::from_millis(100),
            bearer_token: None,
            serialized: false,
        }
    }
}

pub struct RemoteBackend {
    id: String,
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend {
            id: format!("remote:{}", config.base_url),
            config,
            agent,
        }
    }

    fn post_once(&self, texts: &[String]) -> Result<Vec<ScoreVector>, Attempt> {
        let url = format!("{}/score", self.config.base_url);
        let mut req = self.agent.post(&url);
        if let Some(token) = &self.config.bearer_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send_json(ScoreRequest {
                texts: texts.to_vec(),
            })
            .map_err(|e| Attempt::Retry(BackendError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Retry(BackendError::Transport(format!(
                "{url} returned {status}"
            ))));
        }
        if status != 200 {
            return Err(Attempt::Fatal(BackendError::Protocol(format!(
                "{url} returned {status}"
            ))));
        }
        let body: ScoreResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(BackendError::Protocol(e.to_string())))?;
        let vectors = body.into_vectors().map_err(Attempt::Fatal)?;
        if vectors.len() != texts.len() {
            return Err(Attempt::Fatal(BackendError::Protocol(format!(
                "sent {} texts, received {} rows",
                texts.len(),
                vectors.len()
            ))));
        }
        Ok(vectors)
    }
}

enum Attempt {
    Retry(BackendError),
    Fatal(BackendError),
}

impl InferenceBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, texts: &[String]) -> Result<Vec<ScoreVector>, BackendError> {
        let mut attempt = 0;
        loop {
            match self.post_once(texts) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= self.config.retries => return Err(e),
                Err(Attempt::Retry(e)) => {
                    warn!(backend = %self.id, attempt, error = %e, "retrying score request");
                    thread::sleep(self.config.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn concurrency(&self) -> Concurrency {
        if self.config.serialized {
            Concurrency::Serialized
        } else {
            Concurrency::Concurrent
        }
    }

    /// A zero-text score call; any protocol-conforming answer counts as healthy.
    fn health(&self) -> Result<(), BackendError> {
        match self.post_once(&[]) {
            Ok(_) => Ok(()),
            Err(Attempt::Retry(e) | Attempt::Fatal(e)) => Err(BackendError::Unavailable(e.to_string())),
        }
    }
}
