//! The detection interchange format: versioned JSON holding, per frame, the
//! camera, both sensors' detections with full class distributions, and
//! optional ground truth.
//!
//! ```json
//! {
//!   "format": "detmatch-frames",
//!   "version": 1,
//!   "classes": ["Car", "Pedestrian", "Cyclist"],
//!   "frames": [{
//!     "frame_id": 0,
//!     "camera": {"projection": [[...4], [...4], [...4]], "image_width": 1242.0, "image_height": 375.0},
//!     "gt": [{"class": 0, "bbox2d": {...}, "bbox3d": {...}, "occlusion": 0.0}],
//!     "dets2d": [{"bbox": {"x_min": ..., "y_min": ..., "x_max": ..., "y_max": ...}, "probs": [...]}],
//!     "dets3d": [{"bbox": {"x": ..., "y": ..., "z": ..., "length": ..., "width": ..., "height": ..., "yaw": ...}, "probs": [...]}]
//!   }]
//! }
//! ```
//!
//! `gt` may be null. Probabilities cover the foreground classes and may sum
//! to less than one.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::AnnotatedFrame;
use crate::detection::{Detection2D, Detection3D};
use crate::geometry2d::Box2D;
use crate::geometry3d::{Box3D, CameraModel};
use crate::simulator::SimFrame;

pub const FRAMES_FORMAT: &str = "detmatch-frames";
pub const FRAMES_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtObject {
    pub class: usize,
    pub bbox2d: Option<Box2D>,
    pub bbox3d: Option<Box3D>,
    /// Fraction of the object hidden in the image, when known.
    #[serde(default)]
    pub occlusion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameBundle {
    pub frame_id: u64,
    pub camera: CameraModel,
    pub gt: Option<Vec<GtObject>>,
    pub dets2d: Vec<Detection2D>,
    pub dets3d: Vec<Detection3D>,
}

impl FrameBundle {
    pub fn from_sim(frame: &SimFrame) -> Self {
        let gt = frame
            .scene
            .objects
            .iter()
            .enumerate()
            .map(|(i, o)| GtObject {
                class: o.class,
                bbox2d: frame.gt2d.get(i).copied(),
                bbox3d: Some(o.bbox),
                occlusion: frame.occlusion.get(i).copied(),
            })
            .collect();
        Self {
            frame_id: frame.scene.frame_id,
            camera: frame.scene.camera,
            gt: Some(gt),
            dets2d: frame.dets2d.clone(),
            dets3d: frame.dets3d.clone(),
        }
    }
}

impl AnnotatedFrame for FrameBundle {
    fn frame_id(&self) -> u64 {
        self.frame_id
    }

    fn camera(&self) -> &CameraModel {
        &self.camera
    }

    fn dets2d(&self) -> &[Detection2D] {
        &self.dets2d
    }

    fn dets3d(&self) -> &[Detection3D] {
        &self.dets3d
    }

    fn gt3d(&self) -> Vec<(usize, Box3D)> {
        self.gt
            .iter()
            .flatten()
            .filter_map(|g| g.bbox3d.map(|b| (g.class, b)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesFile {
    pub format: String,
    pub version: u32,
    pub classes: Vec<String>,
    pub frames: Vec<FrameBundle>,
}

impl FramesFile {
    pub fn new(classes: Vec<String>, frames: Vec<FrameBundle>) -> Self {
        Self {
            format: FRAMES_FORMAT.into(),
            version: FRAMES_VERSION,
            classes,
            frames,
        }
    }
}

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed frames file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected format {expected:?}, found {found:?}")]
    Format { expected: String, found: String },
    #[error("unsupported version {found}; this reader handles version {supported}")]
    Version { found: u64, supported: u32 },
    #[error("frame at position {index} has no camera")]
    MissingCamera { index: usize },
    #[error("frame {frame_id}: {message}")]
    Invalid { frame_id: u64, message: String },
}

#[derive(Deserialize)]
struct Header {
    format: Option<String>,
    version: Option<u64>,
}

#[derive(Deserialize)]
struct RawFrames {
    frames: Vec<serde_json::Value>,
}

fn check_frame(f: &FrameBundle, classes: usize) -> Result<(), InterchangeError> {
    let bad = |message: String| InterchangeError::Invalid {
        frame_id: f.frame_id,
        message,
    };
    for p in f.dets2d.iter().map(|d| &d.probs).chain(f.dets3d.iter().map(|d| &d.probs)) {
        if p.len() != classes {
            return Err(bad(format!("a detection has {} class probabilities, expected {classes}", p.len())));
        }
    }
    for g in f.gt.iter().flatten() {
        if g.class >= classes {
            return Err(bad(format!("ground-truth class {} out of range", g.class)));
        }
    }
    Ok(())
}

pub fn frames_from_str(text: &str) -> Result<FramesFile, InterchangeError> {
    let header: Header = serde_json::from_str(text)?;
    let found = header.format.unwrap_or_default();
    if found != FRAMES_FORMAT {
        return Err(InterchangeError::Format {
            expected: FRAMES_FORMAT.into(),
            found,
        });
    }
    let version = header.version.unwrap_or(0);
    if version != FRAMES_VERSION as u64 {
        return Err(InterchangeError::Version {
            found: version,
            supported: FRAMES_VERSION,
        });
    }
    let raw: RawFrames = serde_json::from_str(text)?;
    if let Some(index) = raw
        .frames
        .iter()
        .position(|f| f.get("camera").is_none_or(|c| c.is_null()))
    {
        return Err(InterchangeError::MissingCamera { index });
    }
    let file: FramesFile = serde_json::from_str(text)?;
    for f in &file.frames {
        check_frame(f, file.classes.len())?;
    }
    Ok(file)
}

pub fn frames_to_string(file: &FramesFile) -> String {
    serde_json::to_string_pretty(file).expect("frames serialize") + "\n"
}

pub fn read_frames(path: &Path) -> Result<FramesFile, InterchangeError> {
    let text = fs::read_to_string(path).map_err(|source| InterchangeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    frames_from_str(&text)
}

pub fn write_frames(path: &Path, file: &FramesFile) -> Result<(), InterchangeError> {
    fs::write(path, frames_to_string(file)).map_err(|source| InterchangeError::Io {
        path: path.display().to_string(),
        source,
    })
}
