use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use super::EvalError;
use crate::scorer::{BackendError, InferenceBackend};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub n_items: usize,
    pub batch_size: usize,
    /// Seconds.
    pub wall_total: f64,
    pub per_item_mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub p99_ms: f64,
    /// Items per second.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchTiming {
    pub batch_index: usize,
    pub batch_size: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRun {
    pub report: LatencyReport,
    pub batches: Vec<BatchTiming>,
}

impl LatencyRun {
    pub fn batches_csv(&self) -> String {
        let mut out = String::from("batch_index,batch_size,wall_ms\n");
        for b in &self.batches {
            let _ = writeln!(out, "{},{},{}", b.batch_index, b.batch_size, b.wall_ms);
        }
        out
    }
}

/// Nearest-rank percentile of an ascending-sorted slice.
pub fn percentile(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Time `backend` over `texts` in batches of `batch_size`.
///
/// `warmup_batches` untimed calls run first, cycling through the batches.
/// Each item is attributed its batch's wall time divided by the batch size.
/// The `&mut` borrow keeps the backend exclusive for the whole run.
pub fn latency_bench<B: InferenceBackend + ?Sized>(
    backend: &mut B,
    texts: &[String],
    batch_size: usize,
    warmup_batches: usize,
) -> Result<LatencyRun, EvalError> {
    assert!(batch_size >= 1, "batch_size must be positive");
    if texts.is_empty() {
        return Err(EvalError::NothingToTime);
    }
    let chunks: Vec<&[String]> = texts.chunks(batch_size).collect();
    for chunk in chunks.iter().cycle().take(warmup_batches) {
        backend.score(chunk)?;
    }

    let mut batches = Vec::with_capacity(chunks.len());
    let mut per_item = Vec::with_capacity(texts.len());
    let start = Instant::now();
    for (batch_index, chunk) in chunks.iter().enumerate() {
        let t0 = Instant::now();
        let scores = backend.score(chunk)?;
        let wall = t0.elapsed().as_secs_f64() * 1e3;
        if scores.len() != chunk.len() {
            return Err(BackendError::Protocol(format!(
                "expected {} score vectors, got {}",
                chunk.len(),
                scores.len()
            ))
            .into());
        }
        per_item.extend(std::iter::repeat_n(wall / chunk.len() as f64, chunk.len()));
        batches.push(BatchTiming {
            batch_index,
            batch_size: chunk.len(),
            wall_ms: wall,
        });
    }
    let wall_total = start.elapsed().as_secs_f64();

    per_item.sort_by(f64::total_cmp);
    let n = texts.len();
    Ok(LatencyRun {
        report: LatencyReport {
            n_items: n,
            batch_size,
            wall_total,
            per_item_mean_ms: wall_total * 1e3 / n as f64,
            p50_ms: percentile(&per_item, 50.0),
            p95_ms: percentile(&per_item, 95.0),
            p99_ms: percentile(&per_item, 99.0),
            throughput: n as f64 / wall_total,
        },
        batches,
    })
}
