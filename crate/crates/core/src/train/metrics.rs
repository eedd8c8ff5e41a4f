//! RMSE and MAPE on raw counts with low-volume filtering.

use serde::{Deserialize, Serialize};

/// Error statistics of one task. `rmse` and `mape` are `None` when every
/// sample was filtered out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
    pub n_evaluated: usize,
}

impl TaskMetrics {
    /// Keep pairs whose true value is at least `threshold`.
    pub fn compute(preds: &[f64], truths: &[f64], threshold: f64) -> Self {
        let mut sq = 0.0;
        let mut pct = 0.0;
        let mut n = 0usize;
        for (&p, &y) in preds.iter().zip(truths) {
            if y < threshold {
                continue;
            }
            let e = p - y;
            sq += e * e;
            // a zero truth only survives a non-positive threshold
            pct += if y == 0.0 { 0.0 } else { e.abs() / y };
            n += 1;
        }
        if n == 0 {
            return Self {
                rmse: None,
                mape: None,
                n_evaluated: 0,
            };
        }
        Self {
            rmse: Some((sq / n as f64).sqrt()),
            mape: Some(pct / n as f64),
            n_evaluated: n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.n_evaluated == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub start: TaskMetrics,
    pub end: TaskMetrics,
    /// Samples scored before filtering.
    pub total: usize,
    pub threshold: f64,
}

impl Metrics {
    /// `preds` and `truths` are raw `(start, end)` pairs.
    pub fn compute(preds: &[[f64; 2]], truths: &[[f64; 2]], threshold: f64) -> Self {
        let col = |v: &[[f64; 2]], k: usize| v.iter().map(|x| x[k]).collect::<Vec<_>>();
        Self {
            start: TaskMetrics::compute(&col(preds, 0), &col(truths, 0), threshold),
            end: TaskMetrics::compute(&col(preds, 1), &col(truths, 1), threshold),
            total: preds.len().min(truths.len()),
            threshold,
        }
    }

    /// Mean RMSE over the two tasks, ignoring empty ones.
    pub fn mean_rmse(&self) -> Option<f64> {
        let v: Vec<f64> = [self.start.rmse, self.end.rmse].into_iter().flatten().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}
