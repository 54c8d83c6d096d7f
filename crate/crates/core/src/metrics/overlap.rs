//! Rotated-box overlap in the ground plane and in 3D.
//!
//! Footprints are intersected with Sutherland-Hodgman clipping (both
//! operands are convex) and measured with the shoelace formula.

use crate::geometry3d::Box3D;

pub type Point = (f64, f64);

/// Signed shoelace area; positive for counterclockwise vertex order.
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % n];
        acc += x1 * y2 - x2 * y1;
    }
    acc / 2.0
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    signed_area(poly).abs()
}

fn ccw(poly: &[Point]) -> Vec<Point> {
    let mut v = poly.to_vec();
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn line_intersection(p1: Point, p2: Point, q1: Point, q2: Point) -> Point {
    let (dx, dy) = (p2.0 - p1.0, p2.1 - p1.1);
    let (ex, ey) = (q2.0 - q1.0, q2.1 - q1.1);
    let denom = dx * ey - dy * ex;
    if denom.abs() < f64::EPSILON {
        return p2;
    }
    let t = ((q1.0 - p1.0) * ey - (q1.1 - p1.1) * ex) / denom;
    (p1.0 + t * dx, p1.1 + t * dy)
}

/// Intersection of `subject` with the convex polygon `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let clip = ccw(clip);
    let mut output = ccw(subject);
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    polygon_area(&clip_convex(&a.footprint(), &b.footprint()))
}

/// IoU of the two footprints in the ground plane.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    let union = a.length * a.width + b.length * b.width - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let (a_top, a_bottom) = a.vertical_extent();
    let (b_top, b_bottom) = b.vertical_extent();
    let overlap_h = (a_bottom.min(b_bottom) - a_top.max(b_top)).max(0.0);
    if overlap_h == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * overlap_h;
    let union = a.volume() + b.volume() - inter;
    if union > 0.0 {
        (inter / union).clamp(0.0, 1.0)
    } else {
        0.0
    }
}
