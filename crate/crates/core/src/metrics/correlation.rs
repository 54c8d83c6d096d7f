//! Correlation between a box-quality measure and the true overlap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub quality: f64,
    pub best_iou: f64,
    pub gt: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub pearson: f64,
    pub spearman: f64,
    /// Set when either series is constant; both coefficients are then 0.
    pub degenerate: bool,
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("correlation needs at least 3 records, got {0}")]
pub struct TooFewRecords(pub usize);

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn quality_correlation(records: &[EvalRecord]) -> Result<Correlation, TooFewRecords> {
    if records.len() < 3 {
        return Err(TooFewRecords(records.len()));
    }
    let q: Vec<f64> = records.iter().map(|r| r.quality).collect();
    let iou: Vec<f64> = records.iter().map(|r| r.best_iou).collect();
    match (pearson(&q, &iou), pearson(&average_ranks(&q), &average_ranks(&iou))) {
        (Some(p), Some(s)) => Ok(Correlation {
            pearson: p,
            spearman: s,
            degenerate: false,
        }),
        _ => Ok(Correlation {
            pearson: 0.0,
            spearman: 0.0,
            degenerate: true,
        }),
    }
}
