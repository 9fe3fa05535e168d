use std::collections::HashMap;
use std::future::IntoFuture;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};
use tokio::sync::oneshot;
use tracing::{debug, info, warn};

use juree_core::{
    binary_decision, multiclass_decision, BinaryVerdict, Decision, InferenceBackend, MulticlassVerdict, RiskLabel,
    ScoreVector, Taxonomy,
};

use crate::batcher::{Batcher, SubmitError};
use crate::config::{build_backend, GatewayConfig};
use crate::metrics::Metrics;
use crate::triage::{LabelError, TriageStore};

pub const DEFAULT_TRIAGE_LIMIT: usize = 20;
pub const MAX_TRIAGE_LIMIT: usize = 1000;

pub struct AppState {
    pub config: GatewayConfig,
    pub taxonomy: Taxonomy,
    pub backend: Arc<dyn InferenceBackend>,
    pub batcher: Batcher,
    pub metrics: Metrics,
    pub triage: Option<Arc<Mutex<TriageStore>>>,
}

impl AppState {
    /// Must run inside a tokio runtime: the batcher worker is spawned here.
    pub fn new(
        config: GatewayConfig,
        backend: Arc<dyn InferenceBackend>,
        taxonomy: Taxonomy,
        triage: Option<TriageStore>,
    ) -> Arc<AppState> {
        let batcher = Batcher::spawn(backend.clone(), &config.batching);
        Arc::new(AppState {
            config,
            taxonomy,
            backend,
            batcher,
            metrics: Metrics::default(),
            triage: triage.map(|t| Arc::new(Mutex::new(t))),
        })
    }

    /// Build backend, taxonomy and triage store from the config.
    pub fn from_config(config: GatewayConfig) -> anyhow::Result<Arc<AppState>> {
        let backend = build_backend(&config.backend)?;
        let taxonomy = config.load_taxonomy()?;
        let triage = match &config.triage {
            Some(t) => Some(TriageStore::load(&t.queue, &t.dataset)?),
            None => None,
        };
        Ok(AppState::new(config, backend, taxonomy, triage))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemVerdict {
    pub scores: ScoreVector,
    pub binary: BinaryVerdict,
    pub multiclass: MulticlassVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModerationResponse {
    pub model: String,
    pub results: Vec<ItemVerdict>,
    pub latency_ms: f64,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.code, "message": self.message});
        (self.status, Json(body)).into_response()
    }
}

/// Validate a moderation body: an object with exactly one of `text` or
/// `texts`; every text non-blank and at most `max_bytes` long.
pub fn parse_moderation(body: &[u8], max_bytes: usize) -> Result<Vec<String>, ApiError> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed JSON: {e}")))?;
    let Value::Object(map) = value else {
        return Err(ApiError::bad_request("body must be a JSON object"));
    };
    if let Some(k) = map.keys().find(|k| *k != "text" && *k != "texts") {
        return Err(ApiError::bad_request(format!("unknown field {k:?}")));
    }
    let texts = match (map.get("text"), map.get("texts")) {
        (Some(_), Some(_)) => return Err(ApiError::bad_request("give either text or texts, not both")),
        (None, None) => return Err(ApiError::bad_request("missing text or texts")),
        (Some(Value::String(s)), None) => vec![s.clone()],
        (Some(_), None) => return Err(ApiError::bad_request("text must be a string")),
        (None, Some(Value::Array(items))) => items
            .iter()
            .enumerate()
            .map(|(i, v)| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(ApiError::bad_request(format!("texts[{i}] must be a string"))),
            })
            .collect::<Result<Vec<_>, _>>()?,
        (None, Some(_)) => return Err(ApiError::bad_request("texts must be an array of strings")),
    };
    if texts.is_empty() {
        return Err(ApiError::bad_request("texts must not be empty"));
    }
    for (i, t) in texts.iter().enumerate() {
        if t.trim().is_empty() {
            return Err(ApiError::bad_request(format!("text {i} is empty")));
        }
        if t.len() > max_bytes {
            return Err(ApiError::bad_request(format!(
                "text {i} is {} bytes, limit {max_bytes}",
                t.len()
            )));
        }
    }
    Ok(texts)
}

async fn moderate(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let start = Instant::now();
    let (response, items) = match moderate_inner(&state, &body, start).await {
        Ok(r) => {
            let n = r.results.len();
            (Json(r).into_response(), n)
        }
        Err(e) => {
            debug!(status = %e.status, message = %e.message, "moderation rejected");
            (e.into_response(), 0)
        }
    };
    let ms = start.elapsed().as_secs_f64() * 1e3;
    state.metrics.record_request(response.status().as_u16(), ms, items);
    response
}

async fn moderate_inner(state: &AppState, body: &[u8], start: Instant) -> Result<ModerationResponse, ApiError> {
    let texts = parse_moderation(body, state.config.max_text_bytes)?;
    if texts.len() > state.config.batching.max_queue {
        return Err(ApiError::bad_request(format!(
            "{} texts exceeds the per-request limit {}",
            texts.len(),
            state.config.batching.max_queue
        )));
    }
    let scores = state.batcher.score(texts).await.map_err(|e| match e {
        SubmitError::Overloaded { .. } => ApiError::new(StatusCode::TOO_MANY_REQUESTS, "overloaded", e.to_string()),
        SubmitError::Backend(_) | SubmitError::Stopped => {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable", e.to_string())
        }
    })?;
    let results: Vec<ItemVerdict> = scores
        .into_iter()
        .map(|scores| {
            let binary = binary_decision(&scores, &state.taxonomy);
            if binary.decision == Decision::Unsafe {
                state.metrics.record_trigger(binary.trigger_class);
            }
            ItemVerdict {
                scores,
                binary,
                multiclass: multiclass_decision(&scores, &state.taxonomy),
            }
        })
        .collect();
    Ok(ModerationResponse {
        model: state.backend.id().to_string(),
        results,
        latency_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn triage_store(state: &AppState) -> Result<Arc<Mutex<TriageStore>>, ApiError> {
    state
        .triage
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "triage_unavailable", "no triage queue loaded"))
}

async fn triage_next(
    State(state): State<Arc<AppState>>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let store = triage_store(&state)?;
    let limit = match params.get("limit") {
        None => DEFAULT_TRIAGE_LIMIT,
        Some(s) => s
            .parse::<usize>()
            .ok()
            .filter(|&k| k <= MAX_TRIAGE_LIMIT)
            .ok_or_else(|| ApiError::bad_request(format!("limit must be an integer in 0..={MAX_TRIAGE_LIMIT}")))?,
    };
    let store = store.lock().unwrap();
    let items = store.next(limit);
    Ok(Json(json!({"items": items, "queued": store.queued()})).into_response())
}

async fn triage_label(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let store = triage_store(&state)?;
    let v: Value =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed JSON: {e}")))?;
    let field = |k: &str| v.get(k).and_then(Value::as_str);
    let label_name = field("label").ok_or_else(|| ApiError::bad_request("label must be a string"))?;
    let label = RiskLabel::from_str(label_name).map_err(|e| ApiError::bad_request(e.to_string()))?;
    state
        .taxonomy
        .validate_label(label_name)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let reviewer = field("reviewer_id")
        .filter(|r| !r.trim().is_empty())
        .ok_or_else(|| ApiError::bad_request("reviewer_id must be a non-empty string"))?
        .to_string();
    let timestamp = match v.get("timestamp") {
        None | Some(Value::Null) => humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(_) => return Err(ApiError::bad_request("timestamp must be a non-empty string")),
    };

    let outcome = tokio::task::spawn_blocking(move || store.lock().unwrap().label(&id, label, &reviewer, &timestamp))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    match outcome {
        Ok(o) => {
            state.metrics.record_label();
            info!(id = %o.candidate_id, label = %o.label, reviewer = %o.reviewer_id, "triage label committed");
            Ok(Json(o).into_response())
        }
        Err(e @ LabelError::UnknownItem(_)) => Err(ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string())),
        Err(e @ LabelError::AlreadyLabeled { .. }) => {
            Err(ApiError::new(StatusCode::CONFLICT, "already_labeled", e.to_string()))
        }
        Err(e @ LabelError::NotInDataset(_)) => {
            Err(ApiError::new(StatusCode::NOT_FOUND, "not_in_dataset", e.to_string()))
        }
        Err(e @ LabelError::Persist(_)) => {
            warn!(error = %e, "label not persisted");
            Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "persist_failed", e.to_string()))
        }
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    let backend = state.backend.clone();
    let health = tokio::task::spawn_blocking(move || backend.health())
        .await
        .map_err(|e| e.to_string())
        .and_then(|r| r.map_err(|e| e.to_string()));
    match health {
        Ok(()) => Json(json!({"status": "ok", "model": state.backend.id()})).into_response(),
        Err(reason) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"status": "unavailable", "model": state.backend.id(), "reason": reason})),
        )
            .into_response(),
    }
}

async fn metricsz(State(state): State<Arc<AppState>>) -> Response {
    Json(state.metrics.snapshot(state.batcher.batches(), state.batcher.pending())).into_response()
}

async fn require_bearer(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config.bearer_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            let mut resp =
                ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response();
            resp.headers_mut()
                .insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
            return resp;
        }
    }
    next.run(req).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let body_limit = state
        .config
        .max_text_bytes
        .saturating_mul(state.config.batching.max_queue.min(1024))
        .saturating_add(64 * 1024)
        .min(64 << 20);
    let api = Router::new()
        .route("/v1/moderate", post(moderate))
        .route("/v1/triage/next", get(triage_next))
        .route("/v1/triage/{id}/label", post(triage_label))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_bearer));
    Router::new()
        .merge(api)
        .route("/healthz", get(healthz))
        .route("/metricsz", get(metricsz))
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(state)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Serve until `shutdown` resolves, then drain in-flight requests for at most
/// the configured grace period.
pub async fn serve_with_shutdown(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let grace = Duration::from_millis(state.config.shutdown_grace_ms);
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let server = tokio::spawn(
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = stop_rx.await;
            })
            .into_future(),
    );
    shutdown.await;
    info!("shutting down, draining in-flight requests");
    let _ = stop_tx.send(());
    match tokio::time::timeout(grace, server).await {
        Ok(joined) => joined.map_err(std::io::Error::other)?,
        Err(_) => {
            warn!(?grace, "grace period elapsed with requests still in flight");
            Ok(())
        }
    }
}

pub async fn serve(config: GatewayConfig) -> anyhow::Result<()> {
    let state = AppState::from_config(config)?;
    let listener = tokio::net::TcpListener::bind(&state.config.bind).await?;
    info!(addr = %listener.local_addr()?, model = state.backend.id(), "listening");
    serve_with_shutdown(listener, state, shutdown_signal()).await?;
    Ok(())
}

/// A gateway running on its own runtime thread, stopped on drop.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    /// Bind `config.bind` (use port 0 for an ephemeral port) and serve.
    pub fn start(
        config: GatewayConfig,
        backend: Arc<dyn InferenceBackend>,
        taxonomy: Taxonomy,
        triage: Option<TriageStore>,
    ) -> std::io::Result<BackgroundServer> {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(&config.bind))?;
        let addr = listener.local_addr()?;
        let state = rt.block_on(async { AppState::new(config, backend, taxonomy, triage) });
        let (stop, stop_rx) = oneshot::channel::<()>();
        let served = state.clone();
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let stop = async {
                    let _ = stop_rx.await;
                };
                if let Err(e) = serve_with_shutdown(listener, served, stop).await {
                    warn!(error = %e, "background server failed");
                }
            });
        });
        Ok(BackgroundServer {
            addr,
            state,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
