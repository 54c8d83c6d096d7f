//! Supervised detection loss for toy detectors against hard labels (ground
//! truth or pseudo-labels), with analytic gradients in detector parameters.
//!
//! Predictions are matched greedily to labels by IoU in descending
//! confidence. Matched predictions pay a smooth-L1 box loss and a focal loss
//! toward the label's class; unmatched predictions pay a focal loss toward
//! background unless they overlap one of the ignore boxes.

use serde::{Deserialize, Serialize};

use crate::detection::ClassProbs;
use crate::geometry2d::{iou2d, Box2D};
use crate::geometry3d::{normalize_angle, Box3D, BOX3D_PARAMS};
use crate::matchcost::{focal_loss, PROB_CLAMP};
use crate::metrics::iou3d;

use super::detector::{ToyDetection2D, ToyDetection3D, ToyDetector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label3D {
    pub bbox: Box3D,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Label2D {
    pub bbox: Box2D,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisionConfig {
    /// Minimum IoU for a prediction to take a label.
    pub match_iou: f64,
    /// Smooth-L1 transition point.
    pub beta: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// Whether unmatched predictions are pushed toward background.
    pub background: bool,
}

impl Default for SupervisionConfig {
    fn default() -> Self {
        Self {
            match_iou: 0.3,
            beta: 1.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            background: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedLoss {
    pub loc: f64,
    pub cls: f64,
    pub total: f64,
    pub matched: usize,
    /// Set when no prediction matched a label; the loss is then zero.
    pub no_match: bool,
    pub grad: Vec<f64>,
}

impl SupervisedLoss {
    fn empty(n: usize) -> Self {
        Self {
            loc: 0.0,
            cls: 0.0,
            total: 0.0,
            matched: 0,
            no_match: true,
            grad: vec![0.0; n],
        }
    }
}

pub fn smooth_l1(d: f64, beta: f64) -> (f64, f64) {
    if d.abs() < beta {
        (0.5 * d * d / beta, d / beta)
    } else {
        (d.abs() - 0.5 * beta, d.signum())
    }
}

/// Focal loss toward background, with its gradient in the foreground logits.
pub fn background_focal(probs: &ClassProbs, gamma: f64, alpha: f64) -> (f64, Vec<f64>) {
    let bg = probs.background();
    let fg = 1.0 - bg;
    let clamped = bg < PROB_CLAMP;
    let log_bg = bg.max(PROB_CLAMP).ln();
    let loss = -alpha * fg.powf(gamma) * log_bg;
    let d_mod = if gamma == 0.0 || fg == 0.0 {
        0.0
    } else {
        -gamma * fg.powf(gamma - 1.0)
    };
    let d_log = if clamped { 0.0 } else { 1.0 / bg };
    let d_loss_dbg = -alpha * (d_mod * log_bg + fg.powf(gamma) * d_log);
    let grad = probs.as_slice().iter().map(|&pk| d_loss_dbg * (-bg * pk)).collect();
    (loss.max(0.0), grad)
}

/// Prediction indices in descending confidence; each claims the unclaimed
/// label with the highest IoU if it reaches `threshold`.
pub fn greedy_assign<F>(scores: &[f64], labels: usize, iou: F, threshold: f64) -> Vec<Option<usize>>
where
    F: Fn(usize, usize) -> f64,
{
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut claimed = vec![false; labels];
    let mut out = vec![None; scores.len()];
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for l in 0..labels {
            if claimed[l] {
                continue;
            }
            let v = iou(p, l);
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((l, v));
            }
        }
        if let Some((l, _)) = best {
            claimed[l] = true;
            out[p] = Some(l);
        }
    }
    out
}

struct Pred<'a> {
    probs: &'a ClassProbs,
    cue: &'a [f64],
    base_class: usize,
    moves: &'a [bool],
}

fn accumulate(
    detector: &ToyDetector,
    preds: &[Pred],
    assigned: &[Option<usize>],
    ignored: &[bool],
    label_class: impl Fn(usize) -> usize,
    box_diff: impl Fn(usize, usize) -> Vec<f64>,
    cfg: &SupervisionConfig,
) -> SupervisedLoss {
    let mut out = SupervisedLoss::empty(detector.params.len());
    out.matched = assigned.iter().filter(|a| a.is_some()).count();
    if out.matched == 0 {
        return out;
    }
    out.no_match = false;
    for (p, pred) in preds.iter().enumerate() {
        let (cls, d_logits) = match assigned[p] {
            Some(l) => {
                let diff = box_diff(p, l);
                let mut d_box = vec![0.0; diff.len()];
                for (c, d) in diff.iter().enumerate() {
                    let (v, g) = smooth_l1(*d, cfg.beta);
                    out.loc += v;
                    d_box[c] = g;
                }
                detector.accumulate_box_grad(pred.base_class, &d_box, pred.moves, &mut out.grad);
                focal_loss(pred.probs, label_class(l), cfg.focal_gamma, cfg.focal_alpha)
            }
            None if cfg.background && !ignored[p] => background_focal(pred.probs, cfg.focal_gamma, cfg.focal_alpha),
            None => continue,
        };
        out.cls += cls;
        detector.accumulate_logit_grad(pred.cue, &d_logits, &mut out.grad);
    }
    out.total = out.loc + out.cls;
    out
}

pub fn supervised_loss_3d(
    detector: &ToyDetector,
    preds: &[ToyDetection3D],
    labels: &[Label3D],
    cfg: &SupervisionConfig,
) -> SupervisedLoss {
    supervised_loss_3d_ignoring(detector, preds, labels, &[], cfg)
}

/// As [`supervised_loss_3d`], but unmatched predictions overlapping a box in
/// `ignore` at `match_iou` or more take no background loss.
pub fn supervised_loss_3d_ignoring(
    detector: &ToyDetector,
    preds: &[ToyDetection3D],
    labels: &[Label3D],
    ignore: &[Box3D],
    cfg: &SupervisionConfig,
) -> SupervisedLoss {
    let ignored: Vec<bool> = preds
        .iter()
        .map(|p| ignore.iter().any(|b| iou3d(&p.det.bbox, b) >= cfg.match_iou))
        .collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.det.score()).collect();
    let assigned = greedy_assign(&scores, labels.len(), |p, l| iou3d(&preds[p].det.bbox, &labels[l].bbox), cfg.match_iou);
    let view: Vec<Pred> = preds
        .iter()
        .map(|p| Pred {
            probs: &p.det.probs,
            cue: &p.cue,
            base_class: p.base_class,
            moves: &p.moves,
        })
        .collect();
    accumulate(
        detector,
        &view,
        &assigned,
        &ignored,
        |l| labels[l].class,
        |p, l| {
            let a = preds[p].det.bbox.params();
            let b = labels[l].bbox.params();
            let mut d: Vec<f64> = (0..BOX3D_PARAMS).map(|i| a[i] - b[i]).collect();
            d[6] = normalize_angle(d[6]);
            d
        },
        cfg,
    )
}

pub fn supervised_loss_2d(
    detector: &ToyDetector,
    preds: &[ToyDetection2D],
    labels: &[Label2D],
    cfg: &SupervisionConfig,
) -> SupervisedLoss {
    supervised_loss_2d_ignoring(detector, preds, labels, &[], cfg)
}

/// As [`supervised_loss_2d`], but unmatched predictions overlapping a box in
/// `ignore` at `match_iou` or more take no background loss.
pub fn supervised_loss_2d_ignoring(
    detector: &ToyDetector,
    preds: &[ToyDetection2D],
    labels: &[Label2D],
    ignore: &[Box2D],
    cfg: &SupervisionConfig,
) -> SupervisedLoss {
    let ignored: Vec<bool> = preds
        .iter()
        .map(|p| ignore.iter().any(|b| iou2d(&p.det.bbox, b) >= cfg.match_iou))
        .collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.det.score()).collect();
    let assigned = greedy_assign(&scores, labels.len(), |p, l| iou2d(&preds[p].det.bbox, &labels[l].bbox), cfg.match_iou);
    let view: Vec<Pred> = preds
        .iter()
        .map(|p| Pred {
            probs: &p.det.probs,
            cue: &p.cue,
            base_class: p.base_class,
            moves: &p.moves,
        })
        .collect();
    accumulate(
        detector,
        &view,
        &assigned,
        &ignored,
        |l| labels[l].class,
        |p, l| {
            let a = preds[p].det.bbox.params();
            let b = labels[l].bbox.params();
            (0..4).map(|i| a[i] - b[i]).collect()
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{Detection2D, Detection3D};
    use crate::toytrain::detector::{apply_2d, apply_3d, Modality};
    use crate::simulator::SceneConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn base3(x: f64, probs: Vec<f64>) -> Detection3D {
        Detection3D::new(Box3D::new(x, 1.0, 20.0, 4.0, 1.6, 1.5, 0.2).unwrap(), ClassProbs::new(probs).unwrap())
    }

    #[test]
    fn perfect_predictions_cost_only_class_loss() {
        let det = ToyDetector::for_scene(Modality::Lidar, &SceneConfig::default());
        let preds = vec![apply_3d(&det, &base3(0.0, vec![1.0, 0.0, 0.0]))];
        let labels = vec![Label3D {
            bbox: preds[0].det.bbox,
            class: 0,
        }];
        let out = supervised_loss_3d(&det, &preds, &labels, &SupervisionConfig::default());
        assert_eq!(out.loc, 0.0);
        assert!(out.cls < 1e-12);
        assert_eq!(out.matched, 1);
    }

    #[test]
    fn small_offset_is_quadratic() {
        let det = ToyDetector::for_scene(Modality::Lidar, &SceneConfig::default());
        let preds = vec![apply_3d(&det, &base3(0.0, vec![1.0, 0.0, 0.0]))];
        let mut shifted = preds[0].det.bbox;
        shifted.x -= 0.2;
        shifted.z += 0.1;
        let labels = vec![Label3D { bbox: shifted, class: 0 }];
        let out = supervised_loss_3d(&det, &preds, &labels, &SupervisionConfig::default());
        assert!((out.loc - (0.5 * 0.04 + 0.5 * 0.01)).abs() < 1e-12);
        assert!((out.grad[det.bias_index(0, 0)] - 0.2).abs() < 1e-12);
        assert!((out.grad[det.bias_index(0, 2)] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn no_labels_is_flagged_zero() {
        let det = ToyDetector::for_scene(Modality::Lidar, &SceneConfig::default());
        let preds = vec![apply_3d(&det, &base3(0.0, vec![0.5, 0.1, 0.1]))];
        let out = supervised_loss_3d(&det, &preds, &[], &SupervisionConfig::default());
        assert!(out.no_match);
        assert_eq!(out.total, 0.0);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn background_focal_matches_finite_differences() {
        let logits = [0.4, -1.0, 1.3];
        let (_, g) = background_focal(&ClassProbs::from_logits(&logits), 2.0, 0.25);
        for k in 0..3 {
            let mut hi = logits;
            let mut lo = logits;
            hi[k] += 1e-6;
            lo[k] -= 1e-6;
            let fd = (background_focal(&ClassProbs::from_logits(&hi), 2.0, 0.25).0
                - background_focal(&ClassProbs::from_logits(&lo), 2.0, 0.25).0)
                / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7, "{k}: {fd} vs {}", g[k]);
        }
    }

    fn random_params(rng: &mut ChaCha8Rng, det: &mut ToyDetector, scale: f64) {
        for p in det.params.0.iter_mut() {
            *p = rng.random_range(-scale..scale);
        }
    }

    fn fd_check(loss: impl Fn(&ToyDetector) -> SupervisedLoss, det: &ToyDetector) {
        let g = loss(det).grad;
        for i in 0..det.params.len() {
            let h = 1e-6;
            let mut hi = det.clone();
            let mut lo = det.clone();
            hi.params.0[i] += h;
            lo.params.0[i] -= h;
            let fd = (loss(&hi).total - loss(&lo).total) / (2.0 * h);
            let tol = 1e-3 * fd.abs().max(g[i].abs()).max(1e-3);
            assert!((fd - g[i]).abs() <= tol, "param {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = SupervisionConfig::default();
        for _ in 0..20 {
            let mut det = ToyDetector::for_scene(Modality::Lidar, &SceneConfig::default());
            random_params(&mut rng, &mut det, 0.2);
            let bases: Vec<Detection3D> = (0..4)
                .map(|i| {
                    let mut p = vec![rng.random_range(0.05..0.3), rng.random_range(0.05..0.3), 0.0];
                    p[2] = rng.random_range(0.0..(0.9 - p[0] - p[1]));
                    base3(i as f64 * 3.0 + rng.random_range(-0.3..0.3), p)
                })
                .collect();
            let labels: Vec<Label3D> = (0..3)
                .map(|i| Label3D {
                    bbox: Box3D::new(i as f64 * 3.0 + rng.random_range(-0.4..0.4), 1.1, 20.3, 3.8, 1.7, 1.4, 0.1).unwrap(),
                    class: rng.random_range(0..3),
                })
                .collect();
            fd_check(
                |d| {
                    let preds: Vec<_> = bases.iter().map(|b| apply_3d(d, b)).collect();
                    supervised_loss_3d(d, &preds, &labels, &cfg)
                },
                &det,
            );

            let mut det2 = ToyDetector::for_scene(Modality::Image, &SceneConfig::default());
            random_params(&mut rng, &mut det2, 0.25);
            let bases2: Vec<Detection2D> = (0..3)
                .map(|i| {
                    let x = i as f64 * 100.0 + rng.random_range(-5.0..5.0);
                    Detection2D::new(
                        Box2D::new(x, 50.0, x + 60.0, 150.0).unwrap(),
                        ClassProbs::new(vec![0.3, 0.2, 0.1]).unwrap(),
                    )
                })
                .collect();
            // Offsets stay clear of the smooth-L1 kink.
            let labels2: Vec<Label2D> = bases2
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let dx = if i % 2 == 0 { 2.0 } else { 0.3 };
                    Label2D {
                        bbox: Box2D::new(b.bbox.x_min + dx, b.bbox.y_min + 2.0, b.bbox.x_max + dx, b.bbox.y_max - 0.4)
                            .unwrap(),
                        class: i,
                    }
                })
                .collect();
            fd_check(
                |d| {
                    let preds: Vec<_> = bases2.iter().map(|b| apply_2d(d, b)).collect();
                    supervised_loss_2d(d, &preds, &labels2, &cfg)
                },
                &det2,
            );
        }
    }
}
