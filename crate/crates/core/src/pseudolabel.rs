//! Pseudo-label generation: confidence thresholding, 2D-3D Hungarian
//! matching between teachers (and between the 2D teacher and the 3D
//! student), and EMA teacher updates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::hungarian_solve;
use crate::detection::{Detection2D, Detection3D, Scored};
use crate::exec::Exec;
use crate::geometry3d::{project_box_to_2d, CameraModel};
use crate::matchcost::{build_cost_matrix, CostWeights};

/// Single-modality confidence thresholds and the matching-cost threshold.
pub const TAU_3D: f64 = 0.3;
pub const TAU_2D: f64 = 0.7;
pub const TAU_HUNG: f64 = -1.5;

pub const EMA_MOMENTUM_START: f64 = 0.99;
pub const EMA_MOMENTUM_END: f64 = 0.999;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PseudoLabelError {
    #[error("confidence threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("teacher has {teacher} parameters, student has {student}")]
    LengthMismatch { teacher: usize, student: usize },
    #[error("EMA momentum {0} outside [0, 1]")]
    Momentum(f64),
}

/// Keeps detections whose maximum class probability exceeds `tau`.
pub fn confidence_filter<T: Scored + Clone>(dets: &[T], tau: f64) -> Result<Vec<T>, PseudoLabelError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(PseudoLabelError::Threshold(tau));
    }
    Ok(dets.iter().filter(|d| d.score() > tau).cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    /// Index into the 2D detection list given to the matcher.
    pub index2d: usize,
    /// Index into the 3D detection list given to the matcher.
    pub index3d: usize,
    pub det2d: Detection2D,
    pub det3d: Detection3D,
    pub cost: f64,
}

/// Hungarian matching under the 2D-3D cost, keeping assigned pairs with cost
/// strictly below `tau_hung`. 3D detections that cannot be projected into the
/// image never take part.
pub fn hungarian_match(
    dets2d: &[Detection2D],
    dets3d: &[Detection3D],
    cam: &CameraModel,
    weights: &CostWeights,
    tau_hung: f64,
    exec: Exec,
) -> Vec<MatchedPair> {
    let visible: Vec<usize> = (0..dets3d.len())
        .filter(|&j| project_box_to_2d(cam, &dets3d[j].bbox).is_ok())
        .collect();
    let candidates: Vec<Detection3D> = visible.iter().map(|&j| dets3d[j].clone()).collect();
    let matrix = build_cost_matrix(dets2d, &candidates, cam, weights, exec);
    let assignment = hungarian_solve(&matrix);
    assignment
        .pairs
        .iter()
        .filter(|&&(i, j)| matrix.get(i, j) < tau_hung)
        .map(|&(i, j)| MatchedPair {
            index2d: i,
            index3d: visible[j],
            det2d: dets2d[i].clone(),
            det3d: candidates[j].clone(),
            cost: matrix.get(i, j),
        })
        .collect()
}

/// [`hungarian_match`] over the detections whose confidence exceeds
/// `tau_2d` and `tau_3d`; pair indices still refer to the unfiltered lists.
pub fn prefiltered_match(
    dets2d: &[Detection2D],
    dets3d: &[Detection3D],
    cam: &CameraModel,
    weights: &CostWeights,
    tau_hung: f64,
    (tau_2d, tau_3d): (f64, f64),
    exec: Exec,
) -> Vec<MatchedPair> {
    let keep2: Vec<usize> = (0..dets2d.len()).filter(|&i| dets2d[i].score() > tau_2d).collect();
    let keep3: Vec<usize> = (0..dets3d.len()).filter(|&j| dets3d[j].score() > tau_3d).collect();
    let d2: Vec<Detection2D> = keep2.iter().map(|&i| dets2d[i].clone()).collect();
    let d3: Vec<Detection3D> = keep3.iter().map(|&j| dets3d[j].clone()).collect();
    let mut pairs = hungarian_match(&d2, &d3, cam, weights, tau_hung, exec);
    for p in &mut pairs {
        p.index2d = keep2[p.index2d];
        p.index3d = keep3[p.index3d];
    }
    pairs
}

/// Matches 2D teacher detections with 3D teacher detections.
pub fn match_teachers(
    teacher2d: &[Detection2D],
    teacher3d: &[Detection3D],
    cam: &CameraModel,
    weights: &CostWeights,
    tau_hung: f64,
) -> Vec<MatchedPair> {
    hungarian_match(teacher2d, teacher3d, cam, weights, tau_hung, Exec::default())
}

/// Matches 2D teacher detections with 3D student detections; the pairs feed
/// the consistency loss.
pub fn pair_for_consistency(
    teacher2d: &[Detection2D],
    student3d: &[Detection3D],
    cam: &CameraModel,
    weights: &CostWeights,
    tau_hung: f64,
) -> Vec<MatchedPair> {
    hungarian_match(teacher2d, student3d, cam, weights, tau_hung, Exec::default())
}

/// A flat vector of model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `alpha * teacher + (1 - alpha) * student`, elementwise.
pub fn ema_update(teacher: &ParamVector, student: &ParamVector, alpha: f64) -> Result<ParamVector, PseudoLabelError> {
    if teacher.len() != student.len() {
        return Err(PseudoLabelError::LengthMismatch {
            teacher: teacher.len(),
            student: student.len(),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PseudoLabelError::Momentum(alpha));
    }
    Ok(ParamVector(
        teacher
            .0
            .iter()
            .zip(&student.0)
            .map(|(t, s)| alpha * t + (1.0 - alpha) * s)
            .collect(),
    ))
}

/// EMA momentum ramped linearly from 0.99 at step 0 to 0.999 at
/// `ramp_steps`, constant afterwards.
pub fn ema_momentum(step: usize, ramp_steps: usize) -> f64 {
    if step >= ramp_steps {
        return EMA_MOMENTUM_END;
    }
    let t = step as f64 / ramp_steps as f64;
    EMA_MOMENTUM_START + (EMA_MOMENTUM_END - EMA_MOMENTUM_START) * t
}
