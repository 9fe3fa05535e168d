#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use juree_core::{InferenceBackend, LexiconScorer, Taxonomy};
use juree_gateway::{BackgroundServer, GatewayConfig, TriageStore};

pub fn config() -> GatewayConfig {
    GatewayConfig {
        bind: "127.0.0.1:0".into(),
        ..Default::default()
    }
}

pub fn start(config: GatewayConfig, backend: Arc<dyn InferenceBackend>, triage: Option<TriageStore>) -> BackgroundServer {
    BackgroundServer::start(config, backend, Taxonomy::default(), triage).expect("server starts")
}

pub fn start_reference() -> BackgroundServer {
    start(config(), Arc::new(LexiconScorer::default()), None)
}

pub struct Client {
    agent: ureq::Agent,
    base: String,
    token: Option<String>,
}

impl Client {
    pub fn new(server: &BackgroundServer) -> Client {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Client {
            agent,
            base: server.url(),
            token: None,
        }
    }

    pub fn with_token(mut self, token: &str) -> Client {
        self.token = Some(token.to_string());
        self
    }

    pub fn post(&self, path: &str, body: &str) -> (u16, String) {
        let mut req = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json");
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send(body).expect("request sent");
        let status = resp.status().as_u16();
        (status, resp.body_mut().read_to_string().unwrap())
    }

    pub fn get(&self, path: &str) -> (u16, String) {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let mut resp = req.call().expect("request sent");
        let status = resp.status().as_u16();
        (status, resp.body_mut().read_to_string().unwrap())
    }

    pub fn json(&self, path: &str, body: &str) -> (u16, serde_json::Value) {
        let (s, b) = self.post(path, body);
        (s, serde_json::from_str(&b).unwrap_or_else(|e| panic!("{e}: {b}")))
    }

    pub fn get_json(&self, path: &str) -> (u16, serde_json::Value) {
        let (s, b) = self.get(path);
        (s, serde_json::from_str(&b).unwrap_or_else(|e| panic!("{e}: {b}")))
    }
}

/// Replace the trailing `"latency_ms":<number>` member so bodies compare
/// byte-for-byte. Panics if the field is missing or not last.
pub fn strip_latency(body: &str) -> String {
    let key = ",\"latency_ms\":";
    let at = body.rfind(key).expect("latency_ms present");
    let rest = &body[at + key.len()..];
    let number = rest.strip_suffix('}').expect("latency_ms is the last member");
    number.parse::<f64>().expect("latency_ms is a number");
    format!("{}}}", &body[..at])
}
