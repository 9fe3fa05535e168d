use serde::Serialize;

use super::EvalError;
use crate::scorer::ScoreVector;
use crate::taxonomy::{PerClass, RiskLabel};

/// One-vs-rest average precision per class. Classes without positives are
/// `None` and left out of the macro mean.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuprcReport {
    pub per_class: PerClass<Option<f64>>,
    #[serde(rename = "macro")]
    pub macro_avg: f64,
}

/// Step-wise average precision: mean of precision@k over the ranks `k` that
/// hold a positive. Ranking is by descending score, ties in input order.
/// `None` when there are no positives.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), positives.len());
    let total_pos = positives.iter().filter(|p| **p).count();
    if total_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps input order among equal scores
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total_pos as f64)
}

pub fn auprc(golds: &[RiskLabel], scores: &[ScoreVector]) -> Result<AuprcReport, EvalError> {
    if golds.len() != scores.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: scores.len(),
        });
    }
    let mut per_class = PerClass::splat(None);
    for label in RiskLabel::ALL {
        let s: Vec<f64> = scores.iter().map(|v| v.get(label)).collect();
        let pos: Vec<bool> = golds.iter().map(|g| *g == label).collect();
        per_class.set(label, average_precision(&s, &pos));
    }
    let defined: Vec<f64> = per_class.0.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(EvalError::NoPositives);
    }
    let macro_avg = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(AuprcReport {
        per_class,
        macro_avg,
    })
}
