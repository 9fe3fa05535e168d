//! Classification metrics, AUPRC and latency benchmarking.
//!
//! Headline numbers are macro averages over all six classes; micro averages
//! are reported alongside. Zero denominators yield 0 rather than NaN.

mod auprc;
mod latency;

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Dataset;
use crate::scorer::{batch_score, multiclass_decision, BackendError, InferenceBackend};
use crate::taxonomy::{PerClass, RiskLabel, Taxonomy, TaxonomyError, NUM_CLASSES};

pub use auprc::{auprc, average_precision, AuprcReport};
pub use latency::{latency_bench, percentile, BatchTiming, LatencyReport, LatencyRun};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {golds} gold labels vs {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error(transparent)]
    InvalidLabel(#[from] TaxonomyError),
    #[error("cannot compute metrics over an empty confusion matrix")]
    Empty,
    #[error("no class has a positive example")]
    NoPositives,
    #[error("nothing to time")]
    NothingToTime,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Counts indexed `[gold][pred]` in canonical class order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    pub total: u64,
}

impl ConfusionMatrix {
    pub fn get(&self, gold: RiskLabel, pred: RiskLabel) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(golds: &[RiskLabel], preds: &[RiskLabel]) -> Result<ConfusionMatrix, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (g, p) in golds.iter().zip(preds) {
        cm.counts[g.index()][p.index()] += 1;
        cm.total += 1;
    }
    Ok(cm)
}

/// [`confusion`] over raw class names.
pub fn confusion_from_names<S: AsRef<str>>(golds: &[S], preds: &[S]) -> Result<ConfusionMatrix, EvalError> {
    let parse = |v: &[S]| -> Result<Vec<RiskLabel>, TaxonomyError> {
        v.iter().map(|s| s.as_ref().parse()).collect()
    };
    confusion(&parse(golds)?, &parse(preds)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: u64,
    pub accuracy: f64,
    pub per_class: PerClass<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    pub micro: Averages,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auprc: Option<AuprcReport>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    if cm.total == 0 {
        return Err(EvalError::Empty);
    }
    let mut per_class = PerClass::splat(ClassMetrics::default());
    for label in RiskLabel::ALL {
        let i = label.index();
        let tp = cm.counts[i][i];
        let predicted: u64 = (0..NUM_CLASSES).map(|g| cm.counts[g][i]).sum();
        let support: u64 = cm.counts[i].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        per_class.set(
            label,
            ClassMetrics {
                precision,
                recall,
                f1: f1(precision, recall),
                support,
            },
        );
    }
    let k = NUM_CLASSES as f64;
    let macro_avg = Averages {
        precision: per_class.0.iter().map(|m| m.precision).sum::<f64>() / k,
        recall: per_class.0.iter().map(|m| m.recall).sum::<f64>() / k,
        f1: per_class.0.iter().map(|m| m.f1).sum::<f64>() / k,
    };
    // Single-label: every miss is one FP and one FN, so pooled P = R = accuracy.
    let tp = cm.trace();
    let micro_p = ratio(tp, cm.total);
    let micro_r = ratio(tp, cm.total);
    Ok(MetricsReport {
        n: cm.total,
        accuracy: ratio(tp, cm.total),
        per_class,
        macro_avg,
        micro: Averages {
            precision: micro_p,
            recall: micro_r,
            f1: f1(micro_p, micro_r),
        },
        auprc: None,
    })
}

/// Score every text, take the multiclass argmax per item and report metrics
/// plus AUPRC.
pub fn evaluate<B: InferenceBackend + ?Sized>(
    backend: &B,
    dataset: &Dataset,
    taxonomy: &Taxonomy,
    max_batch: usize,
) -> Result<MetricsReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Empty);
    }
    let scores = batch_score(backend, &dataset.texts(), max_batch)?;
    let preds: Vec<RiskLabel> = scores
        .iter()
        .map(|s| multiclass_decision(s, taxonomy).chosen)
        .collect();
    let golds = dataset.labels();
    let mut report = compute_metrics(&confusion(&golds, &preds)?)?;
    report.auprc = Some(auprc(&golds, &scores)?);
    Ok(report)
}

impl MetricsReport {
    /// Flat `metric,class,value` rows; `class` is `all`, `macro` or `micro`
    /// for aggregate rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,class,value\n");
        let mut row = |metric: &str, class: &str, value: f64| {
            let _ = writeln!(out, "{metric},{class},{value}");
        };
        row("accuracy", "all", self.accuracy);
        for (label, m) in self.per_class.iter() {
            row("precision", label.as_str(), m.precision);
            row("recall", label.as_str(), m.recall);
            row("f1", label.as_str(), m.f1);
            row("support", label.as_str(), m.support as f64);
        }
        for (name, avg) in [("macro", &self.macro_avg), ("micro", &self.micro)] {
            row("precision", name, avg.precision);
            row("recall", name, avg.recall);
            row("f1", name, avg.f1);
        }
        if let Some(a) = &self.auprc {
            for (label, v) in a.per_class.iter() {
                if let Some(v) = v {
                    row("auprc", label.as_str(), v);
                }
            }
            row("auprc", "macro", a.macro_avg);
        }
        out
    }
}
