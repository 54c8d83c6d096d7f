//! Toy detectors: the simulator's sensor output passed through a learnable
//! per-class box bias, per-class logit offsets, and a global gate on a
//! shape-plausibility cue.
//!
//! The cue for class k is minus the log-mismatch between the sensed box and
//! class k's size prior (all three sizes in 3D, the height/width aspect in
//! 2D). It is noisy, so the gate learns how far to trust it; labels that put
//! a class on boxes of the wrong shape pull it down.

use serde::{Deserialize, Serialize};

use crate::detection::{ClassProbs, Detection2D, Detection3D};
use crate::geometry2d::Box2D;
use crate::geometry3d::{normalize_angle, Box3D, BOX3D_PARAMS};
use crate::matchcost::PROB_CLAMP;
use crate::pseudolabel::ParamVector;
use crate::simulator::{render_2d_detections, render_3d_detections, Scene, SceneConfig, SensorProfile2D, SensorProfile3D};

/// Smallest box dimension a bias can shrink a 3D box to, in meters.
pub const MIN_SIZE: f64 = 0.05;
/// Smallest 2D box side, in pixels.
pub const MIN_SIDE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Image,
    Lidar,
}

impl Modality {
    pub fn box_params(self) -> usize {
        match self {
            Modality::Image => 4,
            Modality::Lidar => BOX3D_PARAMS,
        }
    }
}

/// Parameter layout: `classes * box_params` box biases (row per class), then
/// `classes` logit offsets, then the gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDetector {
    pub modality: Modality,
    pub classes: usize,
    /// Length, width and height prior per class, used by the shape cue.
    pub priors: Vec<[f64; 3]>,
    pub params: ParamVector,
}

impl ToyDetector {
    pub fn new(modality: Modality, priors: Vec<[f64; 3]>) -> Self {
        let classes = priors.len();
        Self {
            modality,
            classes,
            priors,
            params: ParamVector::zeros(Self::param_count(modality, classes)),
        }
    }

    pub fn for_scene(modality: Modality, cfg: &SceneConfig) -> Self {
        Self::new(modality, cfg.classes.iter().map(|c| [c.length, c.width, c.height]).collect())
    }

    /// Shape cue of a 3D box for every class.
    pub fn shape_cue_3d(&self, bbox: &Box3D) -> Vec<f64> {
        let dims = [bbox.length, bbox.width, bbox.height];
        self.priors
            .iter()
            .map(|p| -(0..3).map(|i| (dims[i] / p[i]).ln().abs()).sum::<f64>())
            .collect()
    }

    /// Shape cue of a 2D box: aspect (height over width) against each class's
    /// height over its mean footprint side.
    pub fn shape_cue_2d(&self, bbox: &Box2D) -> Vec<f64> {
        let aspect = bbox.height().max(MIN_SIDE) / bbox.width().max(MIN_SIDE);
        self.priors
            .iter()
            .map(|p| -(aspect * 0.5 * (p[0] + p[1]) / p[2]).ln().abs())
            .collect()
    }

    pub fn param_count(modality: Modality, classes: usize) -> usize {
        classes * modality.box_params() + classes + 1
    }

    pub fn bias_index(&self, class: usize, coord: usize) -> usize {
        class * self.modality.box_params() + coord
    }

    pub fn offset_index(&self, class: usize) -> usize {
        self.classes * self.modality.box_params() + class
    }

    pub fn gate_index(&self) -> usize {
        self.params.len() - 1
    }

    pub fn bias(&self, class: usize) -> &[f64] {
        let d = self.modality.box_params();
        &self.params.0[class * d..(class + 1) * d]
    }

    pub fn offset(&self, class: usize) -> f64 {
        self.params.0[self.offset_index(class)]
    }

    pub fn gate(&self) -> f64 {
        self.params.0[self.gate_index()]
    }

    /// Calibrated logits: `base + offset + gate * cue`.
    pub fn logits(&self, base: &[f64], cue: &[f64]) -> Vec<f64> {
        let gate = self.gate();
        base.iter()
            .zip(cue)
            .enumerate()
            .map(|(k, (b, c))| b + self.offset(k) + gate * c)
            .collect()
    }

    /// Maps a loss gradient on the logits of one detection into `grad`.
    pub fn accumulate_logit_grad(&self, cue: &[f64], d_logits: &[f64], grad: &mut [f64]) {
        let gate_grad: f64 = cue.iter().zip(d_logits).map(|(c, g)| c * g).sum();
        for (k, g) in d_logits.iter().enumerate() {
            grad[self.offset_index(k)] += g;
        }
        grad[self.gate_index()] += gate_grad;
    }

    /// Maps a loss gradient on the box of one detection into `grad`; `moves`
    /// marks the coordinates that follow the bias (not clamped).
    pub fn accumulate_box_grad(&self, class: usize, d_box: &[f64], moves: &[bool], grad: &mut [f64]) {
        for (c, (g, m)) in d_box.iter().zip(moves).enumerate() {
            if *m {
                grad[self.bias_index(class, c)] += g;
            }
        }
    }
}

/// A 3D detection with the quantities its gradients need.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetection3D {
    pub det: Detection3D,
    pub logits: Vec<f64>,
    pub base_logits: Vec<f64>,
    /// Shape cue of the sensed box, per class.
    pub cue: Vec<f64>,
    /// Class whose bias row was applied.
    pub base_class: usize,
    pub moves: [bool; BOX3D_PARAMS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDetection2D {
    pub det: Detection2D,
    pub logits: Vec<f64>,
    pub base_logits: Vec<f64>,
    pub cue: Vec<f64>,
    pub base_class: usize,
    pub moves: [bool; 4],
}

pub fn apply_3d(detector: &ToyDetector, base: &Detection3D) -> ToyDetection3D {
    let class = base.class();
    let b = detector.bias(class);
    let p = base.bbox.params();
    let mut moves = [true; BOX3D_PARAMS];
    let mut q = [0.0; BOX3D_PARAMS];
    for i in 0..BOX3D_PARAMS {
        q[i] = p[i] + b[i];
    }
    for i in 3..6 {
        if q[i] < MIN_SIZE {
            q[i] = MIN_SIZE;
            moves[i] = false;
        }
    }
    let bbox = Box3D {
        x: q[0],
        y: q[1],
        z: q[2],
        length: q[3],
        width: q[4],
        height: q[5],
        yaw: normalize_angle(q[6]),
    };
    let base_logits = base.probs.logits(PROB_CLAMP);
    let cue = detector.shape_cue_3d(&base.bbox);
    let logits = detector.logits(&base_logits, &cue);
    ToyDetection3D {
        det: Detection3D::new(bbox, ClassProbs::from_logits(&logits)),
        logits,
        base_logits,
        cue,
        base_class: class,
        moves,
    }
}

pub fn apply_2d(detector: &ToyDetector, base: &Detection2D) -> ToyDetection2D {
    let class = base.class();
    let b = detector.bias(class);
    let p = base.bbox.params();
    let mut moves = [true; 4];
    let mut q: [f64; 4] = std::array::from_fn(|i| p[i] + b[i]);
    // Keep the box valid; the clamped max side stops following its bias.
    for (lo, hi) in [(0, 2), (1, 3)] {
        if q[hi] < q[lo] + MIN_SIDE {
            q[hi] = q[lo] + MIN_SIDE;
            moves[hi] = false;
        }
    }
    let bbox = Box2D {
        x_min: q[0],
        y_min: q[1],
        x_max: q[2],
        y_max: q[3],
    };
    let base_logits = base.probs.logits(PROB_CLAMP);
    let cue = detector.shape_cue_2d(&base.bbox);
    let logits = detector.logits(&base_logits, &cue);
    ToyDetection2D {
        det: Detection2D::new(bbox, ClassProbs::from_logits(&logits)),
        logits,
        base_logits,
        cue,
        base_class: class,
        moves,
    }
}

/// Runs the simulated sensor on `scene` with `seed` and applies the
/// detector.
pub fn toy_forward_3d(
    detector: &ToyDetector,
    scene: &Scene,
    cfg: &SceneConfig,
    profile: &SensorProfile3D,
    seed: u64,
) -> Vec<ToyDetection3D> {
    render_3d_detections(scene, cfg, profile, seed)
        .iter()
        .map(|d| apply_3d(detector, d))
        .collect()
}

pub fn toy_forward_2d(
    detector: &ToyDetector,
    scene: &Scene,
    cfg: &SceneConfig,
    profile: &SensorProfile2D,
    seed: u64,
) -> Vec<ToyDetection2D> {
    render_2d_detections(scene, cfg, profile, seed)
        .iter()
        .map(|d| apply_2d(detector, d))
        .collect()
}
