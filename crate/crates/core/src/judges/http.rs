//! Chat-completions transport with retries and an optional JSON-Lines audit
//! log of every prompt and response.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::Deserialize;
use serde_json::json;
use tracing::warn;

use super::{ChatClient, ChatError, ChatRequest};

pub const ENV_API_KEY: &str = "JUREE_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "JUREE_LLM_BASE_URL";
const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Clone)]
pub struct ChatEndpointConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first failure.
    pub retries: u32,
    pub backoff: Duration,
    pub audit_log: Option<PathBuf>,
}

impl ChatEndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        ChatEndpointConfig {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: None,
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(500),
            audit_log: None,
        }
    }

    /// Read `JUREE_LLM_BASE_URL` (default: the OpenAI API) and
    /// `JUREE_LLM_API_KEY`.
    pub fn from_env() -> Self {
        let base = std::env::var(ENV_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        let mut cfg = Self::new(base);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        cfg
    }
}

pub struct HttpChatClient {
    config: ChatEndpointConfig,
    agent: ureq::Agent,
    audit: Option<Mutex<BufWriter<File>>>,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(config: ChatEndpointConfig) -> Result<Self, ChatError> {
        let audit = match &config.audit_log {
            Some(path) => {
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| ChatError::Config(format!("audit log {}: {e}", path.display())))?;
                Some(Mutex::new(BufWriter::new(file)))
            }
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpChatClient {
            config,
            agent,
            audit,
        })
    }

    fn audit(&self, request: &ChatRequest, attempt: u32, outcome: &Result<String, ChatError>) {
        let Some(audit) = &self.audit else { return };
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or_default();
        let (response, error) = match outcome {
            Ok(text) => (Some(text.as_str()), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let line = json!({
            "ts": ts,
            "model": request.model_id,
            "attempt": attempt,
            "prompt": request.prompt,
            "response": response,
            "error": error,
        });
        let mut w = audit.lock().unwrap_or_else(|p| p.into_inner());
        if serde_json::to_writer(&mut *w, &line)
            .map_err(std::io::Error::from)
            .and_then(|_| w.write_all(b"\n"))
            .and_then(|_| w.flush())
            .is_err()
        {
            warn!("failed to append to chat audit log");
        }
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, (bool, ChatError)> {
        let url = format!("{}/chat/completions", self.config.base_url);
        let mut body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.sampling.temperature,
        });
        if request.sampling.repetition_penalty != 1.0 {
            body["repetition_penalty"] = json!(request.sampling.repetition_penalty);
        }
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| (true, ChatError::Transport(e.to_string())))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            let retry = status == 429 || status >= 500;
            return Err((retry, ChatError::Status { status, body: text }));
        }
        let completion: Completion = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, ChatError::Protocol(e.to_string())))?;
        completion
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| (false, ChatError::Protocol("no choices in completion".into())))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let mut attempt = 0;
        loop {
            let result = self.attempt(request);
            let outcome = result.clone().map_err(|(_, e)| e);
            self.audit(request, attempt, &outcome);
            match result {
                Ok(text) => return Ok(text),
                Err((false, e)) => return Err(e),
                Err((true, e)) if attempt >= self.config.retries => {
                    return Err(ChatError::RetriesExhausted {
                        attempts: attempt + 1,
                        last: e.to_string(),
                    })
                }
                Err((true, e)) => {
                    warn!(attempt, error = %e, "retrying chat completion");
                    thread::sleep(self.config.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
            }
        }
    }
}
