//! HTTP moderation gateway: verdicts over a batching scoring layer, the
//! review triage queue, health and metrics.

pub mod batcher;
pub mod config;
pub mod metrics;
pub mod server;
pub mod triage;

pub use config::{build_backend, BackendSpec, GatewayConfig};
pub use server::{parse_moderation, router, serve, AppState, BackgroundServer, ModerationResponse};
pub use triage::TriageStore;
