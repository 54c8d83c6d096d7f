//! Oriented 3D boxes in the camera frame and their projection to image boxes.
//!
//! Coordinates follow the rectified camera convention: x right, y down,
//! z forward. Yaw rotates about the vertical (y) axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry2d::Box2D;

/// Corners with homogeneous depth at or below this value are behind the camera.
pub const DEPTH_EPSILON: f64 = 1e-3;

/// Number of box parameters exposed to gradient code: x, y, z, l, w, h, yaw.
pub const BOX3D_PARAMS: usize = 7;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum GeometryError {
    #[error("box dimensions must be positive (l={0}, w={1}, h={2})")]
    NonPositiveDimensions(f64, f64, f64),
    #[error("box has a corner at or behind the camera plane")]
    BehindCamera,
    #[error("projected box lies entirely outside the image")]
    OutsideImage,
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }
}

/// An image point together with the homogeneous depth it was divided by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2D {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Point2D {
    pub fn behind_camera(&self) -> bool {
        !(self.depth > DEPTH_EPSILON)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

/// Corner signs in the box frame as (along length, along width) for one face.
/// Bottom face first, counterclockwise seen from above, then the top face in
/// the same order.
const FACE_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];

impl Box3D {
    pub fn new(
        x: f64,
        y: f64,
        z: f64,
        length: f64,
        width: f64,
        height: f64,
        yaw: f64,
    ) -> Result<Self, GeometryError> {
        if !(length > 0.0 && width > 0.0 && height > 0.0) {
            return Err(GeometryError::NonPositiveDimensions(length, width, height));
        }
        Ok(Self {
            x,
            y,
            z,
            length,
            width,
            height,
            yaw: normalize_angle(yaw),
        })
    }

    pub fn from_params(p: &[f64; BOX3D_PARAMS]) -> Result<Self, GeometryError> {
        Self::new(p[0], p[1], p[2], p[3], p[4], p[5], p[6])
    }

    pub fn params(&self) -> [f64; BOX3D_PARAMS] {
        [
            self.x,
            self.y,
            self.z,
            self.length,
            self.width,
            self.height,
            self.yaw,
        ]
    }

    pub fn center(&self) -> Point3D {
        Point3D::new(self.x, self.y, self.z)
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    /// Local sign triple (length, height, width) of corner `k`.
    ///
    /// Corners 0..4 are the bottom face (larger y, since y points down),
    /// 4..8 the top face.
    pub fn corner_signs(k: usize) -> (f64, f64, f64) {
        let (sl, sw) = FACE_SIGNS[k % 4];
        let sh = if k < 4 { 1.0 } else { -1.0 };
        (sl, sh, sw)
    }

    /// The eight vertices in the documented order (see [`Box3D::corner_signs`]).
    pub fn corners(&self) -> [Point3D; 8] {
        let (s, c) = self.yaw.sin_cos();
        std::array::from_fn(|k| {
            let (sl, sh, sw) = Self::corner_signs(k);
            let lx = sl * self.length / 2.0;
            let lz = sw * self.width / 2.0;
            Point3D::new(
                self.x + c * lx + s * lz,
                self.y + sh * self.height / 2.0,
                self.z - s * lx + c * lz,
            )
        })
    }

    /// Jacobian of corner `k` with respect to the seven box parameters.
    /// Row-major 3x7: rows are x, y, z of the corner.
    pub fn corner_jacobian(&self, k: usize) -> [[f64; BOX3D_PARAMS]; 3] {
        let (s, c) = self.yaw.sin_cos();
        let (sl, sh, sw) = Self::corner_signs(k);
        let lx = sl * self.length / 2.0;
        let lz = sw * self.width / 2.0;
        [
            [1.0, 0.0, 0.0, c * sl / 2.0, s * sw / 2.0, 0.0, -s * lx + c * lz],
            [0.0, 1.0, 0.0, 0.0, 0.0, sh / 2.0, 0.0],
            [0.0, 0.0, 1.0, -s * sl / 2.0, c * sw / 2.0, 0.0, -c * lx - s * lz],
        ]
    }

    /// Ground-plane footprint as (x, z) vertices, counterclockwise order of
    /// the bottom face.
    pub fn footprint(&self) -> [(f64, f64); 4] {
        let corners = self.corners();
        std::array::from_fn(|k| (corners[k].x, corners[k].z))
    }

    /// Vertical extent as (top, bottom) in camera y.
    pub fn vertical_extent(&self) -> (f64, f64) {
        (self.y - self.height / 2.0, self.y + self.height / 2.0)
    }

    /// Returns a copy translated by `(dx, dy, dz)`.
    pub fn translated(&self, dx: f64, dy: f64, dz: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            z: self.z + dz,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub projection: [[f64; 4]; 3],
    pub image_width: f64,
    pub image_height: f64,
}

impl CameraModel {
    pub fn new(projection: [[f64; 4]; 3], image_width: f64, image_height: f64) -> Self {
        Self {
            projection,
            image_width,
            image_height,
        }
    }

    /// Pinhole camera with focal length `f` and principal point `(cx, cy)`.
    pub fn pinhole(f: f64, cx: f64, cy: f64, image_width: f64, image_height: f64) -> Self {
        Self::new(
            [[f, 0.0, cx, 0.0], [0.0, f, cy, 0.0], [0.0, 0.0, 1.0, 0.0]],
            image_width,
            image_height,
        )
    }

    /// A KITTI-like camera: 1242x375 image, f = 721.5377.
    pub fn kitti_like() -> Self {
        Self::new(
            [
                [721.5377, 0.0, 609.5593, 44.85728],
                [0.0, 721.5377, 172.854, 0.2163791],
                [0.0, 0.0, 1.0, 0.002745884],
            ],
            1242.0,
            375.0,
        )
    }

    fn homogeneous(&self, p: &Point3D) -> [f64; 3] {
        let m = &self.projection;
        std::array::from_fn(|r| m[r][0] * p.x + m[r][1] * p.y + m[r][2] * p.z + m[r][3])
    }

    pub fn project_point(&self, p: &Point3D) -> Point2D {
        let [a, b, w] = self.homogeneous(p);
        Point2D {
            u: a / w,
            v: b / w,
            depth: w,
        }
    }

    /// Projects a point and returns the 2x3 Jacobian of (u, v) with respect to
    /// the point coordinates.
    pub fn project_point_with_jacobian(&self, p: &Point3D) -> (Point2D, [[f64; 3]; 2]) {
        let q = self.project_point(p);
        let m = &self.projection;
        let jac = [
            std::array::from_fn(|c| (m[0][c] - q.u * m[2][c]) / q.depth),
            std::array::from_fn(|c| (m[1][c] - q.v * m[2][c]) / q.depth),
        ];
        (q, jac)
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        (0.0..=self.image_width).contains(&u) && (0.0..=self.image_height).contains(&v)
    }
}

pub fn project_points(cam: &CameraModel, points: &[Point3D]) -> Vec<Point2D> {
    points.iter().map(|p| cam.project_point(p)).collect()
}

/// Projected corners of a box, or `BehindCamera` if any corner has depth at or
/// below [`DEPTH_EPSILON`].
pub fn project_corners(cam: &CameraModel, b: &Box3D) -> Result<[Point2D; 8], GeometryError> {
    let corners = b.corners();
    let projected: [Point2D; 8] = std::array::from_fn(|k| cam.project_point(&corners[k]));
    if projected.iter().any(Point2D::behind_camera) {
        return Err(GeometryError::BehindCamera);
    }
    Ok(projected)
}

/// Axis-aligned hull of the projected corners, before clipping to the image.
pub fn tight_box_unclipped(cam: &CameraModel, b: &Box3D) -> Result<Box2D, GeometryError> {
    let projected = project_corners(cam, b)?;
    Ok(hull(&projected))
}

pub(crate) fn hull(points: &[Point2D]) -> Box2D {
    let mut out = Box2D {
        x_min: f64::INFINITY,
        y_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for p in points {
        out.x_min = out.x_min.min(p.u);
        out.y_min = out.y_min.min(p.v);
        out.x_max = out.x_max.max(p.u);
        out.y_max = out.y_max.max(p.v);
    }
    out
}

/// Tight image box of a 3D box, clipped to the image bounds.
pub fn project_box_to_2d(cam: &CameraModel, b: &Box3D) -> Result<Box2D, GeometryError> {
    let tight = tight_box_unclipped(cam, b)?;
    let clipped = tight.clip(cam.image_width, cam.image_height);
    if clipped.area() > 0.0 {
        Ok(clipped)
    } else {
        Err(GeometryError::OutsideImage)
    }
}
