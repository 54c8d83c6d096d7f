//! The 2D-3D matching cost, the double-sided focal term, and the
//! differentiable 2D-3D consistency loss.
//!
//! The matching cost scores a (2D detection, 3D detection) pair by projecting
//! the 3D box to a tight image box and combining
//!
//! * the normalized L1 distance between the two image boxes,
//! * a GIoU term (`-GIoU` by default, so a perfect pair scores `-lambda_iou`),
//! * a focal term applied in both directions between the class distributions.
//!
//! Lower is better. The consistency loss uses the same box terms with the
//! nonnegative `1 - GIoU` form and supervises the 3D student's class logits
//! with the 2D teacher's class.

use serde::{Deserialize, Serialize};

use crate::assignment::CostMatrix;
use crate::detection::{ClassProbs, Detection2D, Detection3D};
use crate::exec::Exec;
use crate::geometry2d::{giou2d, giou2d_with_grad, l1_box_distance, l1_box_distance_with_grad, Box2D};
use crate::geometry3d::{project_box_to_2d, project_corners, Box3D, CameraModel, GeometryError, BOX3D_PARAMS};

/// Probabilities are floored here before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Cost assigned to pairs whose 3D box cannot be projected.
pub const SENTINEL_COST: f64 = 1e6;

/// How the GIoU enters a cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouTerm {
    /// `-GIoU`, in [-1, 1).
    NegGiou,
    /// `1 - GIoU`, in [0, 2).
    OneMinusGiou,
}

impl IouTerm {
    pub fn apply(self, giou: f64) -> f64 {
        match self {
            IouTerm::NegGiou => -giou,
            IouTerm::OneMinusGiou => 1.0 - giou,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub lambda_l1: f64,
    pub lambda_iou: f64,
    pub lambda_d_focal: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub iou_term: IouTerm,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 1.0,
            lambda_iou: 2.0,
            lambda_d_focal: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            iou_term: IouTerm::NegGiou,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyWeights {
    pub lambda_l1: f64,
    pub lambda_iou: f64,
    pub lambda_focal: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub iou_term: IouTerm,
}

impl Default for ConsistencyWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 1.0,
            lambda_iou: 2.0,
            lambda_focal: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            iou_term: IouTerm::OneMinusGiou,
        }
    }
}

fn check_focal_params(gamma: f64, alpha: f64) -> Result<(), String> {
    if !(gamma >= 0.0) {
        return Err(format!("focal gamma must be >= 0, got {gamma}"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(format!("focal alpha must be in (0, 1), got {alpha}"));
    }
    Ok(())
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lambda_l1", self.lambda_l1),
            ("lambda_iou", self.lambda_iou),
            ("lambda_d_focal", self.lambda_d_focal),
        ] {
            if !(v >= 0.0) {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        check_focal_params(self.focal_gamma, self.focal_alpha)
    }
}

impl ConsistencyWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lambda_l1", self.lambda_l1),
            ("lambda_iou", self.lambda_iou),
            ("lambda_focal", self.lambda_focal),
        ] {
            if !(v >= 0.0) {
                return Err(format!("{name} must be >= 0, got {v}"));
            }
        }
        check_focal_params(self.focal_gamma, self.focal_alpha)
    }
}

/// Focal loss of `probs` against `target`, with its gradient with respect to
/// the logits that produced `probs` through a softmax.
pub fn focal_loss(probs: &ClassProbs, target: usize, gamma: f64, alpha: f64) -> (f64, Vec<f64>) {
    let p = probs.get(target);
    let clamped = p < PROB_CLAMP;
    let pc = p.max(PROB_CLAMP);
    let one_minus = (1.0 - p).max(0.0);
    let log_p = pc.ln();
    let loss = -alpha * one_minus.powf(gamma) * log_p;

    // d(1-p)^gamma / dp, zero where it is not defined (p = 1).
    let d_mod = if gamma == 0.0 || one_minus == 0.0 {
        0.0
    } else {
        -gamma * one_minus.powf(gamma - 1.0)
    };
    let d_log = if clamped { 0.0 } else { 1.0 / p };
    let d_loss_dp = -alpha * (d_mod * log_p + one_minus.powf(gamma) * d_log);

    let grad = probs
        .as_slice()
        .iter()
        .enumerate()
        .map(|(k, &pk)| {
            let dp_dz = if k == target { p * (1.0 - pk) } else { -p * pk };
            d_loss_dp * dp_dz
        })
        .collect();
    (loss.max(0.0), grad)
}

/// Focal loss of each distribution against the other's argmax, summed. Both
/// are renormalized over the foreground classes first.
pub fn double_focal(p2d: &ClassProbs, p3d: &ClassProbs, gamma: f64, alpha: f64) -> f64 {
    let (a, b) = (p2d.renormalized(), p3d.renormalized());
    focal_loss(&a, b.argmax(), gamma, alpha).0 + focal_loss(&b, a.argmax(), gamma, alpha).0
}

/// Individual terms of a matching cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostTerms {
    pub l1: f64,
    pub giou: f64,
    pub d_focal: f64,
    pub total: f64,
}

pub fn pair_cost_terms(
    det2d: &Detection2D,
    det3d: &Detection3D,
    cam: &CameraModel,
    w: &CostWeights,
) -> Result<CostTerms, GeometryError> {
    let projected = project_box_to_2d(cam, &det3d.bbox)?;
    let l1 = l1_box_distance(&det2d.bbox, &projected, cam.image_width, cam.image_height);
    let giou = giou2d(&det2d.bbox, &projected);
    let d_focal = double_focal(&det2d.probs, &det3d.probs, w.focal_gamma, w.focal_alpha);
    let total = w.lambda_l1 * l1 + w.lambda_iou * w.iou_term.apply(giou) + w.lambda_d_focal * d_focal;
    Ok(CostTerms {
        l1,
        giou,
        d_focal,
        total,
    })
}

/// Matching cost of a pair; [`SENTINEL_COST`] when the 3D box is behind the
/// camera or projects outside the image.
pub fn pair_cost(det2d: &Detection2D, det3d: &Detection3D, cam: &CameraModel, w: &CostWeights) -> f64 {
    pair_cost_terms(det2d, det3d, cam, w).map_or(SENTINEL_COST, |t| t.total)
}

pub fn build_cost_matrix(
    dets2d: &[Detection2D],
    dets3d: &[Detection3D],
    cam: &CameraModel,
    w: &CostWeights,
    exec: Exec,
) -> CostMatrix {
    let rows = exec.map(dets2d, |d2| {
        dets3d
            .iter()
            .map(|d3| pair_cost(d2, d3, cam, w))
            .collect::<Vec<_>>()
    });
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    CostMatrix::new(dets2d.len(), dets3d.len(), data).expect("pair costs are finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyGradients {
    /// d loss / d (x, y, z, l, w, h, yaw).
    pub bbox: [f64; BOX3D_PARAMS],
    /// d loss / d class logits of the 3D student.
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyLoss {
    pub loss: f64,
    pub l1: f64,
    pub giou: f64,
    pub focal: f64,
    pub grads: ConsistencyGradients,
}

/// Routes an upstream gradient on the tight box through min/max over the
/// projected corners. Ties split equally among the tied corners.
fn distribute(values: &[f64; 8], pick_max: bool) -> [f64; 8] {
    let target = if pick_max {
        values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    } else {
        values.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let count = values.iter().filter(|&&v| v == target).count() as f64;
    std::array::from_fn(|k| if values[k] == target { 1.0 / count } else { 0.0 })
}

/// Consistency loss between a 2D teacher detection and a 3D student box with
/// class logits, and its gradient with respect to the box parameters and
/// logits. Fails when the student box cannot be projected.
pub fn consistency_loss(
    teacher2d: &Detection2D,
    student_box: &Box3D,
    student_logits: &[f64],
    cam: &CameraModel,
    w: &ConsistencyWeights,
) -> Result<ConsistencyLoss, GeometryError> {
    let corners = student_box.corners();
    let projected = project_corners(cam, student_box)?;
    let us: [f64; 8] = std::array::from_fn(|k| projected[k].u);
    let vs: [f64; 8] = std::array::from_fn(|k| projected[k].v);
    let tight = crate::geometry3d::hull(&projected);
    let clipped = tight.clip(cam.image_width, cam.image_height);
    if clipped.area() <= 0.0 {
        return Err(GeometryError::OutsideImage);
    }

    let (l1, g_l1) = l1_box_distance_with_grad(&teacher2d.bbox, &clipped, cam.image_width, cam.image_height);
    let (giou, g_giou) = giou2d_with_grad(&teacher2d.bbox, &clipped);
    // Both GIoU forms have slope -1.
    let mut d_box2d: [f64; 4] = std::array::from_fn(|i| w.lambda_l1 * g_l1[i] - w.lambda_iou * g_giou[i]);

    // Clipped coordinates do not move with the corners.
    let limits = [cam.image_width, cam.image_height, cam.image_width, cam.image_height];
    for (i, (t, lim)) in tight.params().iter().zip(limits).enumerate() {
        if *t < 0.0 || *t > lim {
            d_box2d[i] = 0.0;
        }
    }

    let route = [
        distribute(&us, false),
        distribute(&vs, false),
        distribute(&us, true),
        distribute(&vs, true),
    ];
    let mut d_u = [0.0; 8];
    let mut d_v = [0.0; 8];
    for k in 0..8 {
        d_u[k] = d_box2d[0] * route[0][k] + d_box2d[2] * route[2][k];
        d_v[k] = d_box2d[1] * route[1][k] + d_box2d[3] * route[3][k];
    }

    let mut g_box = [0.0; BOX3D_PARAMS];
    for k in 0..8 {
        if d_u[k] == 0.0 && d_v[k] == 0.0 {
            continue;
        }
        let (_, jp) = cam.project_point_with_jacobian(&corners[k]);
        let jc = student_box.corner_jacobian(k);
        for (p, g) in g_box.iter_mut().enumerate() {
            let du = (0..3).map(|r| jp[0][r] * jc[r][p]).sum::<f64>();
            let dv = (0..3).map(|r| jp[1][r] * jc[r][p]).sum::<f64>();
            *g += d_u[k] * du + d_v[k] * dv;
        }
    }

    // Foreground-only softmax: the class term compares classes, not
    // foreground against background.
    let probs = ClassProbs::softmax(student_logits);
    let (focal, g_focal) = focal_loss(&probs, teacher2d.class(), w.focal_gamma, w.focal_alpha);
    let loss = w.lambda_l1 * l1 + w.lambda_iou * w.iou_term.apply(giou) + w.lambda_focal * focal;
    Ok(ConsistencyLoss {
        loss,
        l1,
        giou,
        focal,
        grads: ConsistencyGradients {
            bbox: g_box,
            logits: g_focal.into_iter().map(|g| w.lambda_focal * g).collect(),
        },
    })
}

/// Value-only form of [`consistency_loss`], evaluated without any gradient
/// machinery.
pub fn consistency_value(
    teacher2d: &Detection2D,
    student_box: &Box3D,
    student_logits: &[f64],
    cam: &CameraModel,
    w: &ConsistencyWeights,
) -> Result<f64, GeometryError> {
    let projected: Box2D = project_box_to_2d(cam, student_box)?;
    let l1 = l1_box_distance(&teacher2d.bbox, &projected, cam.image_width, cam.image_height);
    let giou = giou2d(&teacher2d.bbox, &projected);
    let probs = ClassProbs::softmax(student_logits);
    let (focal, _) = focal_loss(&probs, teacher2d.class(), w.focal_gamma, w.focal_alpha);
    Ok(w.lambda_l1 * l1 + w.lambda_iou * w.iou_term.apply(giou) + w.lambda_focal * focal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn probs(v: &[f64]) -> ClassProbs {
        ClassProbs::new(v.to_vec()).unwrap()
    }

    #[test]
    fn focal_examples() {
        assert_eq!(focal_loss(&probs(&[1.0, 0.0]), 0, 2.0, 0.25).0, 0.0);
        let (l, _) = focal_loss(&probs(&[0.5, 0.5]), 0, 2.0, 0.25);
        assert_relative_eq!(l, 0.25 * 0.25 * 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(l, 0.04332, epsilon = 1e-5);
        let (ce, _) = focal_loss(&probs(&[0.3, 0.7]), 1, 0.0, 1.0);
        assert_relative_eq!(ce, -(0.7f64).ln(), epsilon = 1e-15);
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let logits = [0.3, -1.2, 0.8];
        let h = 1e-6;
        for (gamma, alpha) in [(2.0, 0.25), (0.0, 1.0), (0.5, 0.4)] {
            for target in 0..3 {
                let (_, g) = focal_loss(&ClassProbs::from_logits(&logits), target, gamma, alpha);
                for k in 0..3 {
                    let mut hi = logits;
                    let mut lo = logits;
                    hi[k] += h;
                    lo[k] -= h;
                    let fd = (focal_loss(&ClassProbs::from_logits(&hi), target, gamma, alpha).0
                        - focal_loss(&ClassProbs::from_logits(&lo), target, gamma, alpha).0)
                        / (2.0 * h);
                    assert_relative_eq!(g[k], fd, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn double_focal_examples() {
        let a = probs(&[0.0, 1.0, 0.0]);
        assert_eq!(double_focal(&a, &a, 2.0, 0.25), 0.0);
        let disagree = double_focal(&probs(&[1.0, 0.0]), &probs(&[0.0, 1.0]), 2.0, 0.25);
        assert_relative_eq!(disagree, 2.0 * (-0.25 * PROB_CLAMP.ln()), epsilon = 1e-12);
        let v = double_focal(&probs(&[0.9, 0.1]), &probs(&[0.6, 0.4]), 2.0, 0.25);
        let expected = 0.25 * (0.01 * -(0.9f64).ln() + 0.16 * -(0.6f64).ln());
        assert_relative_eq!(v, expected, epsilon = 1e-15);
        assert_relative_eq!(v, 0.02070, epsilon = 1e-5);
    }

    fn camera() -> CameraModel {
        CameraModel::kitti_like()
    }

    fn car() -> Box3D {
        Box3D::new(1.5, 1.0, 15.0, 3.9, 1.6, 1.56, 0.4).unwrap()
    }

    #[test]
    fn aligned_pair_costs_minus_two() {
        let cam = camera();
        let b3 = car();
        let proj = project_box_to_2d(&cam, &b3).unwrap();
        let d2 = Detection2D::new(proj, ClassProbs::one_hot(3, 0));
        let d3 = Detection3D::new(b3, ClassProbs::one_hot(3, 0));
        let c = pair_cost(&d2, &d3, &cam, &CostWeights::default());
        assert_relative_eq!(c, -2.0, epsilon = 1e-12);
        assert!(c < -1.5);
    }

    #[test]
    fn disjoint_pair_is_unmatched() {
        let cam = camera();
        let b3 = car();
        let proj = project_box_to_2d(&cam, &b3).unwrap();
        // Same size, one box width to the right: GIoU = -1/3.
        let d2 = Detection2D::new(proj.translated(2.0 * proj.width(), 0.0), ClassProbs::one_hot(3, 0));
        let d3 = Detection3D::new(b3, ClassProbs::one_hot(3, 0));
        let t = pair_cost_terms(&d2, &d3, &cam, &CostWeights::default()).unwrap();
        assert_relative_eq!(t.giou, -1.0 / 3.0, epsilon = 1e-12);
        assert!(t.total >= 2.0 / 3.0);
        assert!(t.total > -1.5);
    }

    #[test]
    fn behind_camera_gets_sentinel() {
        let cam = camera();
        let d2 = Detection2D::new(Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap(), ClassProbs::one_hot(3, 0));
        let behind = Detection3D::new(Box3D::new(0.0, 0.0, -5.0, 1.0, 1.0, 1.0, 0.0).unwrap(), ClassProbs::one_hot(3, 0));
        assert_eq!(pair_cost(&d2, &behind, &cam, &CostWeights::default()), SENTINEL_COST);
    }

    #[test]
    fn cost_matrix_entries() {
        let cam = camera();
        assert_eq!(build_cost_matrix(&[], &[], &cam, &CostWeights::default(), Exec::default()).rows(), 0);
        let b3 = car();
        let d2 = vec![
            Detection2D::new(project_box_to_2d(&cam, &b3).unwrap(), probs(&[0.8, 0.1, 0.1])),
            Detection2D::new(Box2D::new(100.0, 100.0, 200.0, 180.0).unwrap(), probs(&[0.1, 0.8, 0.1])),
            Detection2D::new(Box2D::new(700.0, 150.0, 760.0, 260.0).unwrap(), probs(&[0.2, 0.2, 0.6])),
        ];
        let d3 = vec![
            Detection3D::new(b3, probs(&[0.7, 0.2, 0.1])),
            Detection3D::new(Box3D::new(-3.0, 1.0, 20.0, 0.8, 0.6, 1.7, 0.0).unwrap(), probs(&[0.1, 0.6, 0.3])),
        ];
        let w = CostWeights::default();
        for exec in [Exec::Sequential, Exec::Parallel] {
            let m = build_cost_matrix(&d2, &d3, &cam, &w, exec);
            assert_eq!((m.rows(), m.cols()), (3, 2));
            for i in 0..3 {
                for j in 0..2 {
                    assert_eq!(m.get(i, j), pair_cost(&d2[i], &d3[j], &cam, &w));
                }
            }
        }
    }

    #[test]
    fn consistency_optimum_and_separable_terms() {
        let cam = camera();
        let b3 = car();
        let proj = project_box_to_2d(&cam, &b3).unwrap();
        let teacher = Detection2D::new(proj, ClassProbs::one_hot(3, 1));
        let w = ConsistencyWeights::default();
        let agree = [-50.0, 50.0, -50.0];
        let out = consistency_loss(&teacher, &b3, &agree, &cam, &w).unwrap();
        assert!(out.loss.abs() < 1e-12);
        assert!(out.grads.bbox.iter().all(|g| g.abs() < 1e-12), "{:?}", out.grads.bbox);

        let disagree = [2.0, 0.0, 0.0];
        let out = consistency_loss(&teacher, &b3, &disagree, &cam, &w).unwrap();
        let (f, _) = focal_loss(&ClassProbs::softmax(&disagree), 1, w.focal_gamma, w.focal_alpha);
        assert_relative_eq!(out.loss, w.lambda_focal * f, epsilon = 1e-12);
        assert!(out.grads.bbox.iter().all(|g| g.abs() < 1e-12));
        assert!(out.grads.logits[1] < 0.0);
    }

    #[test]
    fn consistency_skips_behind_camera() {
        let cam = camera();
        let teacher = Detection2D::new(Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap(), ClassProbs::one_hot(3, 0));
        let behind = Box3D::new(0.0, 0.0, -5.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(
            consistency_loss(&teacher, &behind, &[0.0; 3], &cam, &ConsistencyWeights::default()),
            Err(GeometryError::BehindCamera)
        );
    }

    proptest! {
        #[test]
        fn double_focal_symmetric(a in proptest::collection::vec(0.01..1.0f64, 3), b in proptest::collection::vec(0.01..1.0f64, 3)) {
            let norm = |v: Vec<f64>| { let s: f64 = v.iter().sum(); ClassProbs::new(v.iter().map(|x| x / s).collect()).unwrap() };
            let (p, q) = (norm(a), norm(b));
            prop_assert_eq!(double_focal(&p, &q, 2.0, 0.25), double_focal(&q, &p, 2.0, 0.25));
        }

        #[test]
        fn more_2d_confidence_never_costs_more(p0 in 0.34..0.98f64, dp in 0.0..0.3f64, dx in -40.0..40.0f64) {
            let cam = camera();
            let b3 = car();
            let proj = project_box_to_2d(&cam, &b3).unwrap().translated(dx, 0.0);
            let d3 = Detection3D::new(b3, probs(&[0.5, 0.3, 0.2]));
            let make = |p: f64| Detection2D::new(proj, ClassProbs::new(vec![p, (1.0 - p) / 2.0, (1.0 - p) / 2.0]).unwrap());
            let w = CostWeights::default();
            let hi = (p0 + dp).min(1.0);
            prop_assert!(pair_cost(&make(hi), &d3, &cam, &w) <= pair_cost(&make(p0), &d3, &cam, &w) + 1e-12);
        }

        #[test]
        fn moving_toward_projection_lowers_box_terms(dx in 5.0..200.0f64, dy in -50.0..50.0f64) {
            let cam = camera();
            let b3 = car();
            let target = project_box_to_2d(&cam, &b3).unwrap();
            let d3 = Detection3D::new(b3, ClassProbs::one_hot(3, 0));
            let mut prev = f64::INFINITY;
            for step in 0..=10 {
                let t = 1.0 - step as f64 / 10.0;
                let d2 = Detection2D::new(target.translated(dx * t, dy * t), ClassProbs::one_hot(3, 0));
                let terms = pair_cost_terms(&d2, &d3, &cam, &CostWeights::default()).unwrap();
                let box_part = terms.l1 - 2.0 * terms.giou;
                prop_assert!(box_part <= prev + 1e-12);
                prev = box_part;
            }
        }
    }
}
