mod common;

use std::time::Duration;

use juree_core::judges::{ChatClient, ChatEndpointConfig, ChatError, ChatRequest, HttpChatClient, Sampling};
use juree_core::scorer::{RemoteBackend, RemoteConfig};
use juree_core::{InferenceBackend, RiskLabel};

fn remote(url: &str) -> RemoteBackend {
    let mut cfg = RemoteConfig::new(url);
    cfg.backoff = Duration::from_millis(1);
    cfg.bearer_token = Some("s3cret".into());
    RemoteBackend::new(cfg)
}

const PERMUTED: &str = r#"{"order":["complaint","vulnerable","system_attack","off_topic","harmful","banking_related"],"scores":[[0.6,0.5,0.4,0.3,0.2,0.1]]}"#;

#[test]
fn remote_backend_remaps_and_authenticates() {
    let server = common::start(vec![(200, PERMUTED.into())]);
    let out = remote(&server.url).score(&["hello".to_string()]).unwrap();
    assert_eq!(out[0].get(RiskLabel::BankingRelated), 0.1);
    assert_eq!(out[0].get(RiskLabel::Complaint), 0.6);
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs[0].path, "/score");
    assert_eq!(reqs[0].header("authorization"), Some("Bearer s3cret"));
    assert_eq!(reqs[0].json(), serde_json::json!({"texts": ["hello"]}));
}

#[test]
fn remote_backend_retries_server_errors_only() {
    let server = common::start(vec![(503, "{}".into()), (200, PERMUTED.into())]);
    assert!(remote(&server.url).score(&["x".to_string()]).is_ok());
    assert_eq!(server.requests.lock().unwrap().len(), 2);

    let server = common::start(vec![(400, "{}".into())]);
    assert!(remote(&server.url).score(&["x".to_string()]).is_err());
    assert_eq!(server.requests.lock().unwrap().len(), 1);

    let server = common::start(vec![(500, "{}".into())]);
    assert!(remote(&server.url).score(&["x".to_string()]).is_err());
    assert_eq!(server.requests.lock().unwrap().len(), 3);
}

#[test]
fn remote_backend_row_count_and_health() {
    let server = common::start(vec![(200, PERMUTED.into())]);
    let b = remote(&server.url);
    assert!(b.score(&["a".to_string(), "b".to_string()]).is_err());
    let ok = common::start(vec![(200, r#"{"order":["banking_related","harmful","off_topic","system_attack","vulnerable","complaint"],"scores":[]}"#.into())]);
    assert!(remote(&ok.url).health().is_ok());
}

fn chat(url: &str, audit: Option<std::path::PathBuf>) -> HttpChatClient {
    let mut cfg = ChatEndpointConfig::new(url);
    cfg.api_key = Some("k".into());
    cfg.backoff = Duration::from_millis(1);
    cfg.retries = 2;
    cfg.audit_log = audit;
    HttpChatClient::new(cfg).unwrap()
}

fn request() -> ChatRequest {
    ChatRequest {
        model_id: "judge-model".into(),
        prompt: "classify this".into(),
        sampling: Sampling {
            temperature: 0.0,
            repetition_penalty: 1.1,
        },
    }
}

const COMPLETION: &str = r#"{"choices":[{"message":{"role":"assistant","content":"{'label': ['harmful']}"}}]}"#;

#[test]
fn chat_client_request_shape_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.jsonl");
    let server = common::start(vec![(429, "{}".into()), (200, COMPLETION.into())]);
    let out = chat(&server.url, Some(audit.clone())).complete(&request()).unwrap();
    assert_eq!(out, "{'label': ['harmful']}");

    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs.len(), 2);
    assert_eq!(reqs[1].path, "/chat/completions");
    assert_eq!(reqs[1].header("authorization"), Some("Bearer k"));
    let body = reqs[1].json();
    assert_eq!(body["model"], "judge-model");
    assert_eq!(body["messages"][0]["content"], "classify this");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["repetition_penalty"], 1.1);

    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&audit)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0]["error"].is_string());
    assert_eq!(lines[1]["response"], "{'label': ['harmful']}");
    assert_eq!(lines[1]["prompt"], "classify this");
    assert_eq!(lines[1]["attempt"], 1);
}

#[test]
fn chat_client_gives_up() {
    let server = common::start(vec![(502, "bad gateway".into())]);
    let err = chat(&server.url, None).complete(&request()).unwrap_err();
    assert!(matches!(err, ChatError::RetriesExhausted { attempts: 3, .. }), "{err:?}");

    let server = common::start(vec![(401, "no".into())]);
    let err = chat(&server.url, None).complete(&request()).unwrap_err();
    assert!(matches!(err, ChatError::Status { status: 401, .. }));
    assert_eq!(server.requests.lock().unwrap().len(), 1);

    let server = common::start(vec![(200, r#"{"choices":[]}"#.into())]);
    assert!(matches!(chat(&server.url, None).complete(&request()), Err(ChatError::Protocol(_))));
}

#[test]
fn chat_client_transport_failure_is_an_error() {
    let mut cfg = ChatEndpointConfig::new("http://127.0.0.1:9");
    cfg.retries = 0;
    cfg.timeout = Duration::from_secs(2);
    let err = HttpChatClient::new(cfg).unwrap().complete(&request()).unwrap_err();
    assert!(matches!(err, ChatError::RetriesExhausted { attempts: 1, .. }), "{err:?}");
}
