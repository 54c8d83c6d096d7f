//! Greedy detection-to-ground-truth matching, precision/recall curves and
//! 40-point interpolated average precision.

use serde::{Deserialize, Serialize};

/// A detection to evaluate: its frame, a quality value used for ranking
/// (confidence, negated match cost, ...) and the box.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranked<B> {
    pub frame: usize,
    pub quality: f64,
    pub item: B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth<B> {
    pub frame: usize,
    pub item: B,
}

/// Outcome of greedy matching for one detection, in the input order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// Index into the ground-truth list, when matched at the threshold.
    pub gt: Option<usize>,
    /// Best IoU against any ground truth in the same frame.
    pub best_iou: f64,
}

impl MatchOutcome {
    pub fn is_tp(&self) -> bool {
        self.gt.is_some()
    }
}

/// Detection indices in descending quality; equal qualities keep input order.
pub fn rank_order<B>(dets: &[Ranked<B>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].quality.total_cmp(&dets[a].quality).then(a.cmp(&b)));
    order
}

/// Visits detections in descending quality; each claims the unclaimed
/// same-frame ground truth with the highest IoU if that IoU reaches
/// `threshold`.
pub fn greedy_match<B, F>(dets: &[Ranked<B>], gts: &[GroundTruth<B>], iou_fn: F, threshold: f64) -> Vec<MatchOutcome>
where
    F: Fn(&B, &B) -> f64,
{
    let mut claimed = vec![false; gts.len()];
    let mut out = vec![
        MatchOutcome {
            gt: None,
            best_iou: 0.0
        };
        dets.len()
    ];
    for di in rank_order(dets) {
        let det = &dets[di];
        let mut best_any = 0.0f64;
        let mut best_free: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt.frame != det.frame {
                continue;
            }
            let iou = iou_fn(&det.item, &gt.item);
            best_any = best_any.max(iou);
            if !claimed[gi] && best_free.is_none_or(|(_, b)| iou > b) {
                best_free = Some((gi, iou));
            }
        }
        let gt = match best_free {
            Some((gi, iou)) if iou >= threshold => {
                claimed[gi] = true;
                Some(gi)
            }
            _ => None,
        };
        out[di] = MatchOutcome {
            gt,
            best_iou: best_any.clamp(0.0, 1.0),
        };
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub num_gt: usize,
}

impl PrCurve {
    pub fn max_recall(&self) -> f64 {
        self.points.iter().map(|p| p.recall).fold(0.0, f64::max)
    }
}

/// One point per distinct quality value: precision and recall of the
/// detections at or above it. With no detections the curve is the single
/// point (precision 1, recall 0).
pub fn curve_from_outcomes(qualities: &[f64], outcomes: &[MatchOutcome], num_gt: usize) -> PrCurve {
    let mut order: Vec<usize> = (0..qualities.len()).collect();
    order.sort_by(|&a, &b| qualities[b].total_cmp(&qualities[a]).then(a.cmp(&b)));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    for (pos, &i) in order.iter().enumerate() {
        seen += 1;
        tp += outcomes[i].is_tp() as usize;
        let last_of_group = order.get(pos + 1).is_none_or(|&n| qualities[n] != qualities[i]);
        if last_of_group {
            points.push(PrPoint {
                threshold: qualities[i],
                precision: tp as f64 / seen as f64,
                recall: if num_gt > 0 { tp as f64 / num_gt as f64 } else { 0.0 },
            });
        }
    }
    if points.is_empty() {
        points.push(PrPoint {
            threshold: f64::INFINITY,
            precision: 1.0,
            recall: 0.0,
        });
    }
    PrCurve { points, num_gt }
}

pub fn pr_curve<B, F>(dets: &[Ranked<B>], gts: &[GroundTruth<B>], iou_fn: F, iou_threshold: f64) -> PrCurve
where
    F: Fn(&B, &B) -> f64,
{
    let outcomes = greedy_match(dets, gts, iou_fn, iou_threshold);
    let qualities: Vec<f64> = dets.iter().map(|d| d.quality).collect();
    curve_from_outcomes(&qualities, &outcomes, gts.len())
}

/// Number of recall samples, 1/40 .. 40/40.
pub const AP_RECALL_POINTS: usize = 40;

/// Mean over recall levels r = 1/40 .. 1 of the best precision reached at
/// recall >= r.
pub fn average_precision(curve: &PrCurve) -> f64 {
    if curve.num_gt == 0 {
        return 0.0;
    }
    let total: f64 = (1..=AP_RECALL_POINTS)
        .map(|k| {
            let r = k as f64 / AP_RECALL_POINTS as f64;
            curve
                .points
                .iter()
                .filter(|p| p.recall >= r - 1e-12)
                .map(|p| p.precision)
                .fold(0.0, f64::max)
        })
        .sum();
    total / AP_RECALL_POINTS as f64
}
