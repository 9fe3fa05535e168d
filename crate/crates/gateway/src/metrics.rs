use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::Serialize;

use juree_core::RiskLabel;

/// Upper bounds (ms) of the latency histogram buckets; a final `+Inf` bucket
/// catches the rest.
pub const LATENCY_BUCKETS_MS: [f64; 11] = [0.5, 1.0, 2.0, 5.0, 10.0, 25.0, 50.0, 100.0, 250.0, 500.0, 1000.0];

#[derive(Debug, Default)]
pub struct Metrics {
    inner: Mutex<Inner>,
}

#[derive(Debug, Default)]
struct Inner {
    requests: u64,
    items: u64,
    status: BTreeMap<u16, u64>,
    buckets: [u64; LATENCY_BUCKETS_MS.len() + 1],
    latency_sum_ms: f64,
    triggers: [u64; 6],
    labels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    pub le: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSnapshot {
    /// Moderation requests, whatever their outcome.
    pub requests_total: u64,
    pub items_total: u64,
    pub status: BTreeMap<String, u64>,
    /// Cumulative counts, one per bucket bound.
    pub latency_ms: Vec<Bucket>,
    pub latency_sum_ms: f64,
    /// Unsafe verdicts per trigger class.
    pub triggers: BTreeMap<String, u64>,
    pub triage_labels_total: u64,
    pub backend_batches: u64,
    pub pending_texts: u64,
}

impl Metrics {
    pub fn record_request(&self, status: u16, latency_ms: f64, items: usize) {
        let mut m = self.inner.lock().unwrap();
        m.requests += 1;
        m.items += items as u64;
        *m.status.entry(status).or_default() += 1;
        let i = LATENCY_BUCKETS_MS
            .iter()
            .position(|&b| latency_ms <= b)
            .unwrap_or(LATENCY_BUCKETS_MS.len());
        m.buckets[i] += 1;
        m.latency_sum_ms += latency_ms;
    }

    pub fn record_trigger(&self, label: RiskLabel) {
        self.inner.lock().unwrap().triggers[label.index()] += 1;
    }

    pub fn record_label(&self) {
        self.inner.lock().unwrap().labels += 1;
    }

    pub fn snapshot(&self, backend_batches: usize, pending: usize) -> MetricsSnapshot {
        let m = self.inner.lock().unwrap();
        let mut cumulative = 0;
        let latency_ms = m
            .buckets
            .iter()
            .enumerate()
            .map(|(i, c)| {
                cumulative += c;
                Bucket {
                    le: LATENCY_BUCKETS_MS.get(i).map_or("+Inf".to_string(), |b| b.to_string()),
                    count: cumulative,
                }
            })
            .collect();
        MetricsSnapshot {
            requests_total: m.requests,
            items_total: m.items,
            status: m.status.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            latency_ms,
            latency_sum_ms: m.latency_sum_ms,
            triggers: RiskLabel::ALL
                .iter()
                .map(|l| (l.as_str().to_string(), m.triggers[l.index()]))
                .collect(),
            triage_labels_total: m.labels,
            backend_batches: backend_batches as u64,
            pending_texts: pending as u64,
        }
    }
}
