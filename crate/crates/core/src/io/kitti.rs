//! KITTI object label and calibration files.
//!
//! Label lines: type, truncated, occluded, alpha, 2D box (left top right
//! bottom), dimensions (h w l), location (x y z, bottom center in rectified
//! camera coordinates), rotation_y, and an optional score.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{ClassProbs, Detection2D, Detection3D};
use crate::geometry2d::Box2D;
use crate::geometry3d::{normalize_angle, Box3D, CameraModel};
use crate::simulator::SimFrame;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KittiType {
    Car,
    Van,
    Truck,
    Pedestrian,
    PersonSitting,
    Cyclist,
    Tram,
    Misc,
    DontCare,
    /// Any other type string, kept verbatim.
    Unknown(String),
}

impl KittiType {
    pub fn parse(s: &str) -> Self {
        match s {
            "Car" => Self::Car,
            "Van" => Self::Van,
            "Truck" => Self::Truck,
            "Pedestrian" => Self::Pedestrian,
            "Person_sitting" => Self::PersonSitting,
            "Cyclist" => Self::Cyclist,
            "Tram" => Self::Tram,
            "Misc" => Self::Misc,
            "DontCare" => Self::DontCare,
            other => Self::Unknown(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Self::Car => "Car",
            Self::Van => "Van",
            Self::Truck => "Truck",
            Self::Pedestrian => "Pedestrian",
            Self::PersonSitting => "Person_sitting",
            Self::Cyclist => "Cyclist",
            Self::Tram => "Tram",
            Self::Misc => "Misc",
            Self::DontCare => "DontCare",
            Self::Unknown(s) => s,
        }
    }

    pub fn is_known(&self) -> bool {
        !matches!(self, Self::Unknown(_))
    }
}

impl fmt::Display for KittiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One label line with its raw fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiObject {
    pub kind: KittiType,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// left, top, right, bottom in pixels.
    pub bbox: [f64; 4],
    /// height, width, length in meters.
    pub dimensions: [f64; 3],
    /// Bottom center x, y, z.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiObject {
    /// DontCare lines mark regions to ignore rather than objects.
    pub fn is_ignore_region(&self) -> bool {
        self.kind == KittiType::DontCare
    }

    pub fn box2d(&self) -> Option<Box2D> {
        let [l, t, r, b] = self.bbox;
        Box2D::new(l, t, r, b).ok()
    }

    /// The 3D box with its center lifted from the bottom face; `None` for the
    /// sentinel dimensions of DontCare lines or any non-positive size.
    pub fn box3d(&self) -> Option<Box3D> {
        let [h, w, l] = self.dimensions;
        let [x, y, z] = self.location;
        Box3D::new(x, y - h / 2.0, z, l, w, h, self.rotation_y).ok()
    }

    /// A label line for `bbox`; alpha is derived from the viewing ray.
    pub fn from_box(kind: KittiType, box2d: &Box2D, box3d: &Box3D, occluded: i32, score: Option<f64>) -> Self {
        Self {
            kind,
            truncated: 0.0,
            occluded,
            alpha: normalize_angle(box3d.yaw - box3d.x.atan2(box3d.z)),
            bbox: box2d.params(),
            dimensions: [box3d.height, box3d.width, box3d.length],
            location: [box3d.x, box3d.y + box3d.height / 2.0, box3d.z],
            rotation_y: box3d.yaw,
            score,
        }
    }

    pub fn to_line(&self) -> String {
        let [l, t, r, b] = self.bbox;
        let [h, w, len] = self.dimensions;
        let [x, y, z] = self.location;
        let mut s = format!(
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            self.kind, self.truncated, self.occluded, self.alpha, l, t, r, b, h, w, len, x, y, z, self.rotation_y
        );
        if let Some(score) = self.score {
            s.push_str(&format!(" {score}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct LineError {
    /// 1-based.
    pub line: usize,
    pub message: String,
}

/// Parsed objects plus the lines that failed; a bad line does not stop the
/// parse.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KittiLabels {
    pub objects: Vec<KittiObject>,
    pub errors: Vec<LineError>,
}

fn parse_line(line: &str) -> Result<KittiObject, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(format!("expected 15 or 16 fields, found {}", fields.len()));
    }
    let num = |i: usize| -> Result<f64, String> {
        fields[i]
            .parse::<f64>()
            .map_err(|_| format!("field {} ({:?}) is not a number", i + 1, fields[i]))
    };
    let occluded = fields[2]
        .parse::<i32>()
        .map_err(|_| format!("field 3 ({:?}) is not an integer", fields[2]))?;
    Ok(KittiObject {
        kind: KittiType::parse(fields[0]),
        truncated: num(1)?,
        occluded,
        alpha: num(3)?,
        bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
        dimensions: [num(8)?, num(9)?, num(10)?],
        location: [num(11)?, num(12)?, num(13)?],
        rotation_y: num(14)?,
        score: if fields.len() == 16 { Some(num(15)?) } else { None },
    })
}

pub fn parse_kitti_label(text: &str) -> KittiLabels {
    let mut out = KittiLabels::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(obj) => out.objects.push(obj),
            Err(message) => out.errors.push(LineError { line: i + 1, message }),
        }
    }
    out
}

pub fn write_kitti_label(objects: &[KittiObject]) -> String {
    objects.iter().map(|o| o.to_line() + "\n").collect()
}

/// Index of `kind` in `class_names`, matching on the KITTI type string.
pub fn class_index(kind: &KittiType, class_names: &[String]) -> Option<usize> {
    class_names.iter().position(|n| n == kind.as_str())
}

/// Detections from a KITTI result file, which carries one score per box.
/// The score goes to the labeled class and the rest of the mass to
/// background. Lines without a score, of types outside `class_names`, or
/// with invalid boxes are skipped.
pub fn detections_from_kitti(objects: &[KittiObject], class_names: &[String]) -> (Vec<Detection2D>, Vec<Detection3D>) {
    let mut d2 = Vec::new();
    let mut d3 = Vec::new();
    let mut warned = false;
    for o in objects {
        let (Some(class), Some(score)) = (class_index(&o.kind, class_names), o.score) else {
            continue;
        };
        if !warned {
            warn!("KITTI detections carry scores only; expanding each into a one-class distribution");
            warned = true;
        }
        let probs = ClassProbs::from_score(class_names.len(), class, score);
        if let Some(b) = o.box2d() {
            d2.push(Detection2D::new(b, probs.clone()));
        }
        if let Some(b) = o.box3d() {
            d3.push(Detection3D::new(b, probs));
        }
    }
    (d2, d3)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibError {
    #[error("calibration has no P2 matrix")]
    MissingP2,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

type Mat34 = [[f64; 4]; 3];
type Mat33 = [[f64; 3]; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiCalib {
    pub p2: Mat34,
    pub r0_rect: Mat33,
    pub tr_velo_to_cam: Option<Mat34>,
}

const IDENTITY3: Mat33 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl KittiCalib {
    /// Calibration whose rectified camera is `camera`.
    pub fn from_camera(camera: &CameraModel) -> Self {
        Self {
            p2: camera.projection,
            r0_rect: IDENTITY3,
            tr_velo_to_cam: None,
        }
    }

    /// Camera for boxes in rectified coordinates (where KITTI labels live).
    pub fn camera(&self, image_width: f64, image_height: f64) -> CameraModel {
        CameraModel::new(self.p2, image_width, image_height)
    }

    /// `P2 * R0_rect`, for points in the unrectified reference camera frame.
    pub fn unrectified_camera(&self, image_width: f64, image_height: f64) -> CameraModel {
        let mut m = [[0.0; 4]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if j < 3 {
                    (0..3).map(|k| self.p2[i][k] * self.r0_rect[k][j]).sum()
                } else {
                    self.p2[i][3]
                };
            }
        }
        CameraModel::new(m, image_width, image_height)
    }

    /// A LiDAR point in rectified camera coordinates.
    pub fn velo_to_rect(&self, p: [f64; 3]) -> Option<[f64; 3]> {
        let tr = self.tr_velo_to_cam?;
        let cam: [f64; 3] = std::array::from_fn(|i| (0..3).map(|k| tr[i][k] * p[k]).sum::<f64>() + tr[i][3]);
        Some(std::array::from_fn(|i| (0..3).map(|k| self.r0_rect[i][k] * cam[k]).sum()))
    }
}

fn parse_values(rest: &str, line: usize, n: usize) -> Result<Vec<f64>, CalibError> {
    let v: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse::<f64>).collect();
    match v {
        Ok(v) if v.len() == n => Ok(v),
        Ok(v) => Err(CalibError::Malformed {
            line,
            message: format!("expected {n} values, found {}", v.len()),
        }),
        Err(e) => Err(CalibError::Malformed { line, message: e.to_string() }),
    }
}

fn mat34(v: &[f64]) -> Mat34 {
    std::array::from_fn(|i| std::array::from_fn(|j| v[4 * i + j]))
}

/// Parses a calibration file. A missing R0_rect is taken as the identity.
pub fn parse_kitti_calib(text: &str) -> Result<KittiCalib, CalibError> {
    let mut p2 = None;
    let mut r0 = None;
    let mut tr = None;
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        match key.trim() {
            "P2" => p2 = Some(mat34(&parse_values(rest, i + 1, 12)?)),
            "R0_rect" | "R_rect" => {
                let v = parse_values(rest, i + 1, 9)?;
                r0 = Some(std::array::from_fn(|a| std::array::from_fn(|b| v[3 * a + b])));
            }
            "Tr_velo_to_cam" | "Tr_velo_cam" => tr = Some(mat34(&parse_values(rest, i + 1, 12)?)),
            _ => {}
        }
    }
    let p2 = p2.ok_or(CalibError::MissingP2)?;
    let r0_rect = r0.unwrap_or_else(|| {
        warn!("calibration has no R0_rect; using the identity");
        IDENTITY3
    });
    Ok(KittiCalib {
        p2,
        r0_rect,
        tr_velo_to_cam: tr,
    })
}

fn row_text(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

pub fn write_kitti_calib(calib: &KittiCalib) -> String {
    let p = row_text(calib.p2.iter().flatten().copied());
    let mut s = String::new();
    for k in 0..4 {
        s.push_str(&format!("P{k}: {p}\n"));
    }
    s.push_str(&format!("R0_rect: {}\n", row_text(calib.r0_rect.iter().flatten().copied())));
    if let Some(tr) = calib.tr_velo_to_cam {
        s.push_str(&format!("Tr_velo_to_cam: {}\n", row_text(tr.iter().flatten().copied())));
    }
    s
}

/// KITTI occlusion level for an occluded fraction of the object.
pub fn occlusion_level(fraction: f64) -> i32 {
    if fraction < 0.1 {
        0
    } else if fraction < 0.5 {
        1
    } else {
        2
    }
}

/// Ground truth of a simulated frame as label lines. Objects whose 2D box
/// touches the image border are marked truncated.
pub fn labels_from_sim(frame: &SimFrame, class_names: &[String]) -> Vec<KittiObject> {
    let cam = &frame.scene.camera;
    frame
        .scene
        .objects
        .iter()
        .zip(&frame.gt2d)
        .zip(&frame.occlusion)
        .map(|((o, b2), &occ)| {
            let mut obj = KittiObject::from_box(KittiType::parse(&class_names[o.class]), b2, &o.bbox, occlusion_level(occ), None);
            let at_border = b2.x_min <= 0.0 || b2.y_min <= 0.0 || b2.x_max >= cam.image_width || b2.y_max >= cam.image_height;
            if at_border {
                obj.truncated = 0.5;
            }
            obj
        })
        .collect()
}

/// Fraction of non-truncated, known-type objects whose projected 3D center
/// falls inside their 2D box, with the number of objects checked.
pub fn center_in_box_rate(objects: &[KittiObject], camera: &CameraModel) -> (f64, usize) {
    let mut checked = 0;
    let mut inside = 0;
    for o in objects {
        if o.truncated > 0.0 || o.is_ignore_region() || !o.kind.is_known() {
            continue;
        }
        let (Some(b2), Some(b3)) = (o.box2d(), o.box3d()) else {
            continue;
        };
        checked += 1;
        let c = camera.project_point(&b3.center());
        if !c.behind_camera() {
            if c.u >= b2.x_min && c.u <= b2.x_max && c.v >= b2.y_min && c.v <= b2.y_max {
                inside += 1;
            }
        }
    }
    let rate = if checked == 0 { 0.0 } else { inside as f64 / checked as f64 };
    (rate, checked)
}
