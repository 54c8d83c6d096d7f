//! Overlap measures, precision/recall evaluation and box-quality
//! correlation.

mod correlation;
mod overlap;
mod pr;

pub use correlation::{average_ranks, pearson, quality_correlation, Correlation, EvalRecord, TooFewRecords};
pub use overlap::{bev_intersection_area, bev_iou, clip_convex, iou3d, polygon_area, signed_area};
pub use pr::{
    average_precision, curve_from_outcomes, greedy_match, pr_curve, rank_order, GroundTruth, MatchOutcome, PrCurve,
    PrPoint, Ranked, AP_RECALL_POINTS,
};

/// Default 3D IoU threshold for a class name: 0.7 for cars, 0.5 otherwise.
pub fn default_iou_threshold(class_name: &str) -> f64 {
    if class_name.eq_ignore_ascii_case("car") {
        0.7
    } else {
        0.5
    }
}
