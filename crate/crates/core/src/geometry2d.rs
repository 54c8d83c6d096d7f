//! Axis-aligned image boxes: IoU, generalized IoU and the normalized L1
//! distance, with gradients with respect to the second operand.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("invalid 2D box [{x_min}, {y_min}, {x_max}, {y_max}]")]
pub struct InvalidBox2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, InvalidBox2D> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(InvalidBox2D {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        }
    }

    pub fn from_params(p: &[f64; 4]) -> Result<Self, InvalidBox2D> {
        Self::new(p[0], p[1], p[2], p[3])
    }

    pub fn params(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn is_valid(&self) -> bool {
        self.params().iter().all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Clips to `[0, width] x [0, height]`. A box fully outside collapses to
    /// zero area.
    pub fn clip(&self, width: f64, height: f64) -> Box2D {
        let x_min = self.x_min.clamp(0.0, width);
        let y_min = self.y_min.clamp(0.0, height);
        Box2D {
            x_min,
            y_min,
            x_max: self.x_max.clamp(x_min, width),
            y_max: self.y_max.clamp(y_min, height),
        }
    }

    pub fn intersection_area(&self, other: &Box2D) -> f64 {
        let iw = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let ih = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        iw.max(0.0) * ih.max(0.0)
    }

    /// Smallest box containing both.
    pub fn enclosing(&self, other: &Box2D) -> Box2D {
        Box2D {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Box2D {
        Box2D {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn scaled(&self, s: f64) -> Box2D {
        Box2D {
            x_min: self.x_min * s,
            y_min: self.y_min * s,
            x_max: self.x_max * s,
            y_max: self.y_max * s,
        }
    }
}

pub fn iou2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

pub fn giou2d(a: &Box2D, b: &Box2D) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let enclosing = a.enclosing(b).area();
    if enclosing <= 0.0 {
        return 0.0;
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (enclosing - union) / enclosing
}

/// Mean absolute difference of the corner parameters, x normalized by the
/// image width and y by the image height.
pub fn l1_box_distance(a: &Box2D, b: &Box2D, width: f64, height: f64) -> f64 {
    let norm = [width, height, width, height];
    let (pa, pb) = (a.params(), b.params());
    (0..4).map(|i| (pa[i] - pb[i]).abs() / norm[i]).sum::<f64>() / 4.0
}

/// Subgradient of `max(fixed, x)` (or `min`) with respect to `x`: 1 when `x`
/// is the active operand, 0 when not, 0.5 at a tie.
fn active(x: f64, fixed: f64, x_wins: bool) -> f64 {
    if x == fixed {
        0.5
    } else if x_wins {
        1.0
    } else {
        0.0
    }
}

/// GIoU of `(a, b)` and its gradient with respect to `b`'s corner parameters.
/// Min/max ties split the gradient equally between the operands.
pub fn giou2d_with_grad(a: &Box2D, b: &Box2D) -> (f64, [f64; 4]) {
    let ix1 = a.x_min.max(b.x_min);
    let iy1 = a.y_min.max(b.y_min);
    let ix2 = a.x_max.min(b.x_max);
    let iy2 = a.y_max.min(b.y_max);
    let iw = (ix2 - ix1).max(0.0);
    let ih = (iy2 - iy1).max(0.0);
    let inter = iw * ih;
    let (bw, bh) = (b.width(), b.height());
    let union = a.area() + bw * bh - inter;
    let enc = a.enclosing(b);
    let (ew, eh) = (enc.width(), enc.height());
    let enclosing = ew * eh;
    if enclosing <= 0.0 || union <= 0.0 {
        return (giou2d(a, b), [0.0; 4]);
    }
    let giou = inter / union - (enclosing - union) / enclosing;

    // d(ix1)/d(b.x_min), etc.
    let d_ix1 = active(b.x_min, a.x_min, b.x_min > a.x_min);
    let d_iy1 = active(b.y_min, a.y_min, b.y_min > a.y_min);
    let d_ix2 = active(b.x_max, a.x_max, b.x_max < a.x_max);
    let d_iy2 = active(b.y_max, a.y_max, b.y_max < a.y_max);
    let d_ex1 = active(b.x_min, a.x_min, b.x_min < a.x_min);
    let d_ey1 = active(b.y_min, a.y_min, b.y_min < a.y_min);
    let d_ex2 = active(b.x_max, a.x_max, b.x_max > a.x_max);
    let d_ey2 = active(b.y_max, a.y_max, b.y_max > a.y_max);

    let overlapping = iw > 0.0 && ih > 0.0;
    let d_inter = if overlapping {
        [-ih * d_ix1, -iw * d_iy1, ih * d_ix2, iw * d_iy2]
    } else {
        [0.0; 4]
    };
    let d_area_b = [-bh, -bw, bh, bw];
    let d_enc = [-eh * d_ex1, -ew * d_ey1, eh * d_ex2, ew * d_ey2];

    let mut grad = [0.0; 4];
    for i in 0..4 {
        let d_union = d_area_b[i] - d_inter[i];
        grad[i] = d_inter[i] / union - inter * d_union / (union * union) + d_union / enclosing
            - union * d_enc[i] / (enclosing * enclosing);
    }
    (giou, grad)
}

/// L1 distance and its gradient with respect to `b`. `sign(0)` is taken as 0.
pub fn l1_box_distance_with_grad(a: &Box2D, b: &Box2D, width: f64, height: f64) -> (f64, [f64; 4]) {
    let norm = [width, height, width, height];
    let (pa, pb) = (a.params(), b.params());
    let mut grad = [0.0; 4];
    let mut total = 0.0;
    for i in 0..4 {
        let d = pb[i] - pa[i];
        total += d.abs() / norm[i];
        grad[i] = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        } / (4.0 * norm[i]);
    }
    (total / 4.0, grad)
}
