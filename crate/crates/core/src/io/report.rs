//! CSV reports. Floats are written in their shortest round-trip form, so
//! identical inputs give byte-identical files and rows read back exactly.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{ClassProbs, Detection3D};
use crate::geometry3d::Box3D;
use crate::pseudolabel::MatchedPair;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: {message}")]
    Invalid { row: usize, message: String },
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, ReportError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(ReportError::from)).collect()
}

/// One pseudo-label pair: the 2D box, the 3D box and each side's class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub frame: u64,
    pub index2d: usize,
    pub index3d: usize,
    pub cost: f64,
    pub class2d: String,
    pub score2d: f64,
    pub class3d: String,
    pub score3d: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

impl PairRow {
    pub fn new(frame: u64, pair: &MatchedPair, class_names: &[String]) -> Self {
        let b2 = &pair.det2d.bbox;
        let b3 = &pair.det3d.bbox;
        Self {
            frame,
            index2d: pair.index2d,
            index3d: pair.index3d,
            cost: pair.cost,
            class2d: class_names[pair.det2d.class()].clone(),
            score2d: pair.det2d.score(),
            class3d: class_names[pair.det3d.class()].clone(),
            score3d: pair.det3d.score(),
            x_min: b2.x_min,
            y_min: b2.y_min,
            x_max: b2.x_max,
            y_max: b2.y_max,
            x: b3.x,
            y: b3.y,
            z: b3.z,
            length: b3.length,
            width: b3.width,
            height: b3.height,
            yaw: b3.yaw,
        }
    }

    /// The 3D side as a detection carrying only its class score.
    pub fn detection3d(&self, class_names: &[String]) -> Result<Detection3D, String> {
        let class = class_names
            .iter()
            .position(|n| *n == self.class3d)
            .ok_or_else(|| format!("unknown class {:?}", self.class3d))?;
        let bbox = Box3D::new(self.x, self.y, self.z, self.length, self.width, self.height, self.yaw)
            .map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&self.score3d) {
            return Err(format!("score {} outside [0, 1]", self.score3d));
        }
        Ok(Detection3D::new(bbox, ClassProbs::from_score(class_names.len(), class, self.score3d)))
    }
}

/// Groups the 3D side of pair rows by frame id, in the order of `frame_ids`.
pub fn pair_detections(rows: &[PairRow], frame_ids: &[u64], class_names: &[String]) -> Result<Vec<Vec<Detection3D>>, ReportError> {
    let mut out = vec![Vec::new(); frame_ids.len()];
    for (i, r) in rows.iter().enumerate() {
        let invalid = |message: String| ReportError::Invalid { row: i + 1, message };
        let slot = frame_ids
            .iter()
            .position(|&f| f == r.frame)
            .ok_or_else(|| invalid(format!("frame {} not in the ground truth", r.frame)))?;
        out[slot].push(r.detection3d(class_names).map_err(invalid)?);
    }
    Ok(out)
}
