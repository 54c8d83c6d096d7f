//! Synthetic scenes and sensor models producing paired 2D/3D detections
//! with ground truth.
//!
//! The two sensors fail differently. The 3D sensor misses objects mostly by
//! distance (a stand-in for point sparsity) and mistakes pole-like clutter for
//! pedestrians; the 2D sensor misses objects hidden behind nearer ones but
//! rarely confuses classes. Confidence is a logistic function of class,
//! distance, occlusion and box quality plus noise, so it ranks boxes only
//! loosely by quality.
//!
//! Every frame draws from its own ChaCha stream derived from the master seed
//! and the frame id, so a corpus is identical whether frames are generated
//! sequentially or in parallel.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{ClassProbs, Detection2D, Detection3D};
use crate::exec::Exec;
use crate::geometry2d::{iou2d, Box2D};
use crate::geometry3d::{normalize_angle, project_box_to_2d, tight_box_unclipped, Box3D, CameraModel, GeometryError};
use crate::metrics::{bev_intersection_area, iou3d};

const STREAM_SCENE: u64 = 0;
const STREAM_3D: u64 = 1;
const STREAM_2D: u64 = 2;
const STREAMS_PER_FRAME: u64 = 4;

/// Placement attempts per requested object before giving up on it.
const PLACEMENT_ATTEMPTS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("{name} = {value} is not a probability")]
    Probability { name: String, value: f64 },
    #[error("{name} has {got} entries, expected {expected}")]
    Shape { name: String, got: usize, expected: usize },
    #[error("row {row} of {name} sums to {sum}")]
    RowSum { name: String, row: usize, sum: f64 },
    #[error("{name} = {value} must be finite and nonnegative")]
    Negative { name: String, value: f64 },
    #[error("{0}")]
    Invalid(String),
}

fn check_prob(name: &str, value: f64) -> Result<(), ProfileError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ProfileError::Probability {
            name: name.to_string(),
            value,
        })
    }
}

fn check_nonneg(name: &str, value: f64) -> Result<(), ProfileError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ProfileError::Negative {
            name: name.to_string(),
            value,
        })
    }
}

fn check_distribution(name: &str, row: usize, probs: &[f64], len: usize) -> Result<(), ProfileError> {
    if probs.len() != len {
        return Err(ProfileError::Shape {
            name: name.to_string(),
            got: probs.len(),
            expected: len,
        });
    }
    for &p in probs {
        check_prob(name, p)?;
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(ProfileError::RowSum {
            name: name.to_string(),
            row,
            sum,
        });
    }
    Ok(())
}

fn check_confusion(name: &str, m: &[Vec<f64>], classes: usize) -> Result<(), ProfileError> {
    if m.len() != classes {
        return Err(ProfileError::Shape {
            name: name.to_string(),
            got: m.len(),
            expected: classes,
        });
    }
    for (row, probs) in m.iter().enumerate() {
        check_distribution(name, row, probs, classes)?;
    }
    Ok(())
}

fn identity(classes: usize) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|i| (0..classes).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut t = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if t < w {
            return i;
        }
        t -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn gauss<R: Rng>(rng: &mut R, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(0.0, std).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> usize {
    if mean > 0.0 {
        Poisson::new(mean).map(|p| p.sample(rng) as usize).unwrap_or(0)
    } else {
        0
    }
}

/// Per-frame random stream.
pub fn frame_rng(seed: u64, frame_id: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame_id.wrapping_mul(STREAMS_PER_FRAME).wrapping_add(stream));
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPrior {
    pub name: String,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Relative standard deviation of each dimension.
    pub size_std: f64,
    /// Relative sampling frequency.
    pub frequency: f64,
}

impl ClassPrior {
    pub fn new(name: &str, length: f64, width: f64, height: f64, frequency: f64) -> Self {
        Self {
            name: name.to_string(),
            length,
            width,
            height,
            size_std: 0.06,
            frequency,
        }
    }
}

pub fn default_classes() -> Vec<ClassPrior> {
    vec![
        ClassPrior::new("Car", 3.9, 1.6, 1.56, 0.5),
        ClassPrior::new("Pedestrian", 0.8, 0.6, 1.73, 0.3),
        ClassPrior::new("Cyclist", 1.76, 0.6, 1.73, 0.2),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub classes: Vec<ClassPrior>,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Pole-like distractors that are not ground truth.
    pub min_clutter: usize,
    pub max_clutter: usize,
    /// Clutter dimensions (length, width, height).
    pub clutter_size: [f64; 3],
    /// Probability that an object is placed behind an existing one.
    pub occlusion_rate: f64,
    pub min_depth: f64,
    pub max_depth: f64,
    /// Fraction of the horizontal field of view used for placement.
    pub lateral_fill: f64,
    /// Height of the camera above the ground plane.
    pub camera_height: f64,
    pub camera: CameraModel,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            classes: default_classes(),
            min_objects: 3,
            max_objects: 8,
            min_clutter: 1,
            max_clutter: 3,
            clutter_size: [0.3, 0.3, 2.6],
            occlusion_rate: 0.15,
            min_depth: 6.0,
            max_depth: 45.0,
            lateral_fill: 0.85,
            camera_height: 1.65,
            camera: CameraModel::kitti_like(),
        }
    }
}

impl SceneConfig {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.classes.is_empty() {
            return Err(ProfileError::Invalid("at least one class is required".into()));
        }
        for c in &self.classes {
            for (n, v) in [("length", c.length), ("width", c.width), ("height", c.height)] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(ProfileError::Invalid(format!("{} {n} must be positive", c.name)));
                }
            }
            check_nonneg("size_std", c.size_std)?;
            check_nonneg("frequency", c.frequency)?;
        }
        if self.classes.iter().all(|c| c.frequency == 0.0) {
            return Err(ProfileError::Invalid("all class frequencies are zero".into()));
        }
        if self.min_objects > self.max_objects || self.min_clutter > self.max_clutter {
            return Err(ProfileError::Invalid("count range has min > max".into()));
        }
        check_prob("occlusion_rate", self.occlusion_rate)?;
        check_prob("lateral_fill", self.lateral_fill)?;
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth) {
            return Err(ProfileError::Invalid("depth range must satisfy 0 < min < max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class: usize,
    pub bbox: Box3D,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub frame_id: u64,
    pub seed: u64,
    pub camera: CameraModel,
    pub objects: Vec<SceneObject>,
    /// Distractors: visible to the sensors, never ground truth.
    pub clutter: Vec<Box3D>,
}

fn distance(b: &Box3D) -> f64 {
    b.x.hypot(b.z)
}

fn place<R: Rng>(
    rng: &mut R,
    cfg: &SceneConfig,
    dims: [f64; 3],
    occluder: Option<&Box3D>,
    existing: &[Box3D],
) -> Option<Box3D> {
    let [length, width, height] = dims;
    let cam = &cfg.camera;
    let focal = cam.projection[0][0];
    let half_fov = cfg.lateral_fill * cam.image_width / (2.0 * focal);
    let (x, z) = match occluder {
        Some(o) => {
            let z = o.z + rng.random_range(2.0..8.0);
            (o.x * z / o.z + gauss(rng, 1.0), z)
        }
        None => {
            let z = rng.random_range(cfg.min_depth..cfg.max_depth);
            (rng.random_range(-1.0..1.0) * half_fov * z, z)
        }
    };
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let y = cfg.camera_height - height / 2.0;
    let b = Box3D::new(x, y, z, length, width, height, yaw).ok()?;
    if z > cfg.max_depth + 10.0 {
        return None;
    }
    if existing.iter().any(|e| bev_intersection_area(e, &b) > 0.0) {
        return None;
    }
    let tight = tight_box_unclipped(cam, &b).ok()?;
    if tight.x_min < 0.0 || tight.x_max > cam.image_width || tight.y_min < 0.0 || tight.y_max > cam.image_height {
        return None;
    }
    Some(b)
}

fn sample_dims<R: Rng>(rng: &mut R, prior: &ClassPrior) -> [f64; 3] {
    let jitter = |rng: &mut R, v: f64| (v * (1.0 + gauss(rng, prior.size_std))).max(0.5 * v);
    [
        jitter(rng, prior.length),
        jitter(rng, prior.width),
        jitter(rng, prior.height),
    ]
}

/// Samples the scene for one frame.
pub fn sample_scene(cfg: &SceneConfig, frame_id: u64, seed: u64) -> Scene {
    let mut rng = frame_rng(seed, frame_id, STREAM_SCENE);
    let n_objects = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let n_clutter = rng.random_range(cfg.min_clutter..=cfg.max_clutter);
    let weights: Vec<f64> = cfg.classes.iter().map(|c| c.frequency).collect();

    let mut boxes: Vec<Box3D> = Vec::new();
    let mut objects = Vec::new();
    for _ in 0..n_objects {
        let class = sample_index(&mut rng, &weights);
        let dims = sample_dims(&mut rng, &cfg.classes[class]);
        let occlude = !objects.is_empty() && rng.random_bool(cfg.occlusion_rate);
        for _ in 0..PLACEMENT_ATTEMPTS {
            let occluder = if occlude { boxes.choose(&mut rng).copied() } else { None };
            if let Some(b) = place(&mut rng, cfg, dims, occluder.as_ref(), &boxes) {
                boxes.push(b);
                objects.push(SceneObject { class, bbox: b });
                break;
            }
        }
    }
    let mut clutter = Vec::new();
    for _ in 0..n_clutter {
        for _ in 0..PLACEMENT_ATTEMPTS {
            if let Some(b) = place(&mut rng, cfg, cfg.clutter_size, None, &boxes) {
                boxes.push(b);
                clutter.push(b);
                break;
            }
        }
    }
    Scene {
        frame_id,
        seed,
        camera: cfg.camera,
        objects,
        clutter,
    }
}

/// Fraction of `target` covered by the union of `occluders`.
pub fn covered_fraction(target: &Box2D, occluders: &[Box2D]) -> f64 {
    let area = target.area();
    if area <= 0.0 {
        return 0.0;
    }
    let clipped: Vec<Box2D> = occluders
        .iter()
        .filter(|o| o.intersection_area(target) > 0.0)
        .map(|o| Box2D {
            x_min: o.x_min.max(target.x_min),
            y_min: o.y_min.max(target.y_min),
            x_max: o.x_max.min(target.x_max),
            y_max: o.y_max.min(target.y_max),
        })
        .collect();
    if clipped.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = clipped.iter().flat_map(|b| [b.x_min, b.x_max]).collect();
    let mut ys: Vec<f64> = clipped.iter().flat_map(|b| [b.y_min, b.y_max]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut covered = 0.0;
    for xw in xs.windows(2) {
        let xm = 0.5 * (xw[0] + xw[1]);
        for yw in ys.windows(2) {
            let ym = 0.5 * (yw[0] + yw[1]);
            if clipped
                .iter()
                .any(|b| b.x_min <= xm && xm <= b.x_max && b.y_min <= ym && ym <= b.y_max)
            {
                covered += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    (covered / area).clamp(0.0, 1.0)
}

/// Fraction of an object's projected box covered by the projections of
/// objects and clutter nearer to the camera.
pub fn occlusion_fraction(scene: &Scene, index: usize) -> Result<f64, GeometryError> {
    let target_box = &scene.objects[index].bbox;
    let target = project_box_to_2d(&scene.camera, target_box)?;
    let d = distance(target_box);
    let occluders: Vec<Box2D> = scene
        .objects
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != index)
        .map(|(_, o)| &o.bbox)
        .chain(scene.clutter.iter())
        .filter(|b| distance(b) < d)
        .filter_map(|b| project_box_to_2d(&scene.camera, b).ok())
        .collect();
    Ok(covered_fraction(&target, &occluders))
}

/// Largest fraction of an object's projected box shared with any other
/// object's projection, regardless of depth order.
pub fn projected_overlap(scene: &Scene, index: usize) -> Result<f64, GeometryError> {
    let target = project_box_to_2d(&scene.camera, &scene.objects[index].bbox)?;
    let mut best = 0.0f64;
    for (i, o) in scene.objects.iter().enumerate() {
        if i == index {
            continue;
        }
        if let Ok(p) = project_box_to_2d(&scene.camera, &o.bbox) {
            best = best.max(target.intersection_area(&p) / target.area());
        }
    }
    Ok(best)
}

/// Maps class, distance, occlusion and box quality to a confidence through
/// a logistic curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceCurve {
    /// Logit offset per predicted class.
    pub class_bias: Vec<f64>,
    /// Logit slope on box quality (the IoU of the noisy box with the truth).
    pub quality_gain: f64,
    /// Logit decrease per meter of distance.
    pub distance_slope: f64,
    /// Logit decrease per unit of occlusion fraction.
    pub occlusion_slope: f64,
    pub noise_std: f64,
}

impl ConfidenceCurve {
    fn validate(&self, classes: usize) -> Result<(), ProfileError> {
        if self.class_bias.len() != classes {
            return Err(ProfileError::Shape {
                name: "class_bias".into(),
                got: self.class_bias.len(),
                expected: classes,
            });
        }
        check_nonneg("noise_std", self.noise_std)
    }

    fn logit<R: Rng>(&self, rng: &mut R, class: usize, quality: f64, distance: f64, occlusion: f64) -> f64 {
        self.class_bias[class] + self.quality_gain * (quality - 0.5)
            - self.distance_slope * distance
            - self.occlusion_slope * occlusion
            + gauss(rng, self.noise_std)
    }

    /// A curve that always yields confidence one.
    pub fn certain(classes: usize) -> Self {
        Self {
            class_bias: vec![60.0; classes],
            quality_gain: 0.0,
            distance_slope: 0.0,
            occlusion_slope: 0.0,
            noise_std: 0.0,
        }
    }
}

/// Class distribution with `score` on `class` and `ratio * score` on the
/// runner-up class (capped so some background mass remains); the rest is
/// background.
fn class_probs(classes: usize, class: usize, score: f64, runner: Option<(usize, f64)>) -> ClassProbs {
    let mut v = vec![0.0; classes];
    v[class] = score;
    if let Some((r, ratio)) = runner {
        if r != class {
            v[r] = (ratio * score).min(0.95 * (1.0 - score));
        }
    }
    ClassProbs::new(v).expect("class probabilities are built in range")
}

/// Runner-up class (the true class for a confused detection, otherwise a
/// random other class) and its probability ratio to the winner, uniform in
/// `[0, max_ratio)`.
fn runner_up<R: Rng>(rng: &mut R, classes: usize, predicted: usize, truth: Option<usize>, max_ratio: f64) -> Option<(usize, f64)> {
    if classes < 2 || max_ratio <= 0.0 {
        return None;
    }
    let r = match truth {
        Some(t) if t != predicted => t,
        _ => {
            let k = rng.random_range(0..classes - 1);
            if k >= predicted {
                k + 1
            } else {
                k
            }
        }
    };
    Some((r, rng.random_range(0.0..max_ratio)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorProfile3D {
    /// Miss probability at zero distance.
    pub miss_near: f64,
    /// Miss probability at `miss_range` and beyond.
    pub miss_far: f64,
    pub miss_range: f64,
    /// Row = true class, column = predicted class.
    pub confusion: Vec<Vec<f64>>,
    pub clutter_detect: f64,
    /// Predicted-class distribution for clutter detections.
    pub clutter_classes: Vec<f64>,
    /// Center noise along x, y, z relative to the object's size: x and z
    /// scale with the footprint size `sqrt(l * w)`, y with the height.
    pub center_std: [f64; 3],
    /// Relative size noise.
    pub size_std: f64,
    pub yaw_std: f64,
    /// Mean number of random false positives per frame.
    pub fp_rate: f64,
    pub confidence: ConfidenceCurve,
    /// Logit offset applied to clutter detections.
    pub clutter_bias: f64,
    /// Logit offset applied to random false positives.
    pub fp_bias: f64,
    /// Upper bound on the runner-up class's probability relative to the
    /// predicted class's.
    pub runner_up: f64,
}

impl Default for SensorProfile3D {
    fn default() -> Self {
        Self {
            miss_near: 0.03,
            miss_far: 0.12,
            miss_range: 60.0,
            confusion: vec![
                vec![0.96, 0.02, 0.02],
                vec![0.02, 0.88, 0.10],
                vec![0.03, 0.12, 0.85],
            ],
            clutter_detect: 0.6,
            clutter_classes: vec![0.0, 0.9, 0.1],
            center_std: [0.04, 0.02, 0.06],
            size_std: 0.03,
            yaw_std: 0.05,
            fp_rate: 0.8,
            confidence: ConfidenceCurve {
                class_bias: vec![1.5, -0.6, 0.3],
                quality_gain: 0.5,
                distance_slope: 0.02,
                occlusion_slope: 0.0,
                noise_std: 1.0,
            },
            clutter_bias: 1.0,
            fp_bias: -1.0,
            runner_up: 0.9,
        }
    }
}

impl SensorProfile3D {
    /// No misses, no noise, no false positives, one-hot classes.
    pub fn perfect(classes: usize) -> Self {
        Self {
            miss_near: 0.0,
            miss_far: 0.0,
            miss_range: 1.0,
            confusion: identity(classes),
            clutter_detect: 0.0,
            clutter_classes: vec![1.0 / classes as f64; classes],
            center_std: [0.0; 3],
            size_std: 0.0,
            yaw_std: 0.0,
            fp_rate: 0.0,
            confidence: ConfidenceCurve::certain(classes),
            clutter_bias: 0.0,
            fp_bias: 0.0,
            runner_up: 0.0,
        }
    }

    /// Copy with every box-noise level multiplied by `factor`.
    pub fn with_noise_scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.center_std = self.center_std.map(|s| s * factor);
        out.size_std *= factor;
        out.yaw_std *= factor;
        out
    }

    pub fn miss_probability(&self, distance: f64) -> f64 {
        let t = if self.miss_range > 0.0 {
            (distance / self.miss_range).min(1.0)
        } else {
            1.0
        };
        (self.miss_near + (self.miss_far - self.miss_near) * t * t).clamp(0.0, 1.0)
    }

    pub fn validate(&self, classes: usize) -> Result<(), ProfileError> {
        check_prob("miss_near", self.miss_near)?;
        check_prob("miss_far", self.miss_far)?;
        check_nonneg("miss_range", self.miss_range)?;
        check_confusion("confusion", &self.confusion, classes)?;
        check_prob("clutter_detect", self.clutter_detect)?;
        check_distribution("clutter_classes", 0, &self.clutter_classes, classes)?;
        for s in self.center_std {
            check_nonneg("center_std", s)?;
        }
        check_nonneg("size_std", self.size_std)?;
        check_nonneg("yaw_std", self.yaw_std)?;
        check_nonneg("fp_rate", self.fp_rate)?;
        check_prob("runner_up", self.runner_up)?;
        self.confidence.validate(classes)
    }

    fn perturb<R: Rng>(&self, rng: &mut R, b: &Box3D) -> Box3D {
        let size = |rng: &mut R, v: f64| (v * (1.0 + gauss(rng, self.size_std))).max(0.05 * v);
        let length = size(rng, b.length);
        let width = size(rng, b.width);
        let height = size(rng, b.height);
        let footprint = (b.length * b.width).sqrt();
        Box3D {
            x: b.x + gauss(rng, self.center_std[0] * footprint),
            y: b.y + gauss(rng, self.center_std[1] * b.height),
            z: b.z + gauss(rng, self.center_std[2] * footprint),
            length,
            width,
            height,
            yaw: normalize_angle(b.yaw + gauss(rng, self.yaw_std)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorProfile2D {
    /// Miss probability of a fully visible object.
    pub miss_base: f64,
    /// Added miss probability of a fully occluded object.
    pub miss_occlusion: f64,
    /// Exponent on the occlusion fraction in the miss model.
    pub miss_power: f64,
    pub confusion: Vec<Vec<f64>>,
    pub clutter_detect: f64,
    pub clutter_classes: Vec<f64>,
    /// Corner noise relative to the box width (x) or height (y).
    pub box_std: f64,
    pub fp_rate: f64,
    pub confidence: ConfidenceCurve,
    pub clutter_bias: f64,
    pub fp_bias: f64,
    pub runner_up: f64,
}

impl Default for SensorProfile2D {
    fn default() -> Self {
        Self {
            miss_base: 0.02,
            miss_occlusion: 0.95,
            miss_power: 1.5,
            confusion: vec![
                vec![0.98, 0.01, 0.01],
                vec![0.01, 0.98, 0.01],
                vec![0.01, 0.02, 0.97],
            ],
            clutter_detect: 0.05,
            clutter_classes: vec![0.0, 0.7, 0.3],
            box_std: 0.02,
            fp_rate: 0.5,
            confidence: ConfidenceCurve {
                class_bias: vec![2.5, 2.0, 2.0],
                quality_gain: 1.0,
                distance_slope: 0.0,
                occlusion_slope: 1.5,
                noise_std: 0.8,
            },
            clutter_bias: 0.0,
            fp_bias: -0.5,
            runner_up: 0.4,
        }
    }
}

impl SensorProfile2D {
    pub fn perfect(classes: usize) -> Self {
        Self {
            miss_base: 0.0,
            miss_occlusion: 0.0,
            miss_power: 1.0,
            confusion: identity(classes),
            clutter_detect: 0.0,
            clutter_classes: vec![1.0 / classes as f64; classes],
            box_std: 0.0,
            fp_rate: 0.0,
            confidence: ConfidenceCurve::certain(classes),
            clutter_bias: 0.0,
            fp_bias: 0.0,
            runner_up: 0.0,
        }
    }

    /// Copy with the box-noise level multiplied by `factor`.
    pub fn with_noise_scale(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.box_std *= factor;
        out
    }

    pub fn miss_probability(&self, occlusion: f64) -> f64 {
        (self.miss_base + self.miss_occlusion * occlusion.clamp(0.0, 1.0).powf(self.miss_power)).clamp(0.0, 1.0)
    }

    pub fn validate(&self, classes: usize) -> Result<(), ProfileError> {
        check_prob("miss_base", self.miss_base)?;
        check_prob("miss_occlusion", self.miss_occlusion)?;
        check_nonneg("miss_power", self.miss_power)?;
        check_confusion("confusion", &self.confusion, classes)?;
        check_prob("clutter_detect", self.clutter_detect)?;
        check_distribution("clutter_classes", 0, &self.clutter_classes, classes)?;
        check_nonneg("box_std", self.box_std)?;
        check_nonneg("fp_rate", self.fp_rate)?;
        check_prob("runner_up", self.runner_up)?;
        self.confidence.validate(classes)
    }

    fn perturb<R: Rng>(&self, rng: &mut R, b: &Box2D, cam: &CameraModel) -> Box2D {
        let (w, h) = (b.width(), b.height());
        let mut x0 = b.x_min + gauss(rng, self.box_std * w);
        let mut x1 = b.x_max + gauss(rng, self.box_std * w);
        let mut y0 = b.y_min + gauss(rng, self.box_std * h);
        let mut y1 = b.y_max + gauss(rng, self.box_std * h);
        if x1 < x0 {
            std::mem::swap(&mut x0, &mut x1);
        }
        if y1 < y0 {
            std::mem::swap(&mut y0, &mut y1);
        }
        let clipped = Box2D {
            x_min: x0,
            y_min: y0,
            x_max: x1.max(x0 + 1.0),
            y_max: y1.max(y0 + 1.0),
        }
        .clip(cam.image_width, cam.image_height);
        if clipped.area() > 0.0 {
            clipped
        } else {
            *b
        }
    }
}

fn random_class_box<R: Rng>(rng: &mut R, cfg: &SceneConfig, classes: usize) -> (usize, Option<Box3D>) {
    let class = rng.random_range(0..classes);
    let dims = sample_dims(rng, &cfg.classes[class]);
    for _ in 0..PLACEMENT_ATTEMPTS {
        if let Some(b) = place(rng, cfg, dims, None, &[]) {
            return (class, Some(b));
        }
    }
    (class, None)
}

/// 3D sensor output for a scene.
pub fn render_3d_detections(
    scene: &Scene,
    cfg: &SceneConfig,
    profile: &SensorProfile3D,
    seed: u64,
) -> Vec<Detection3D> {
    let mut rng = frame_rng(seed, scene.frame_id, STREAM_3D);
    let classes = cfg.num_classes();
    let curve = &profile.confidence;
    let mut out = Vec::new();
    for obj in &scene.objects {
        let d = distance(&obj.bbox);
        if rng.random_bool(profile.miss_probability(d)) {
            continue;
        }
        let predicted = sample_index(&mut rng, &profile.confusion[obj.class]);
        let bbox = profile.perturb(&mut rng, &obj.bbox);
        let quality = iou3d(&bbox, &obj.bbox);
        let score = sigmoid(curve.logit(&mut rng, predicted, quality, d, 0.0));
        let runner = runner_up(&mut rng, classes, predicted, Some(obj.class), profile.runner_up);
        out.push(Detection3D::new(bbox, class_probs(classes, predicted, score, runner)));
    }
    for c in &scene.clutter {
        if !rng.random_bool(profile.clutter_detect) {
            continue;
        }
        let predicted = sample_index(&mut rng, &profile.clutter_classes);
        let bbox = profile.perturb(&mut rng, c);
        let z = curve.logit(&mut rng, predicted, 0.0, distance(c), 0.0) + profile.clutter_bias;
        let runner = runner_up(&mut rng, classes, predicted, None, profile.runner_up);
        out.push(Detection3D::new(bbox, class_probs(classes, predicted, sigmoid(z), runner)));
    }
    for _ in 0..poisson(&mut rng, profile.fp_rate) {
        let (class, b) = random_class_box(&mut rng, cfg, classes);
        let Some(b) = b else { continue };
        let bbox = profile.perturb(&mut rng, &b);
        let z = curve.logit(&mut rng, class, 0.0, distance(&b), 0.0) + profile.fp_bias;
        let runner = runner_up(&mut rng, classes, class, None, profile.runner_up);
        out.push(Detection3D::new(bbox, class_probs(classes, class, sigmoid(z), runner)));
    }
    out
}

/// 2D sensor output for a scene.
pub fn render_2d_detections(
    scene: &Scene,
    cfg: &SceneConfig,
    profile: &SensorProfile2D,
    seed: u64,
) -> Vec<Detection2D> {
    let mut rng = frame_rng(seed, scene.frame_id, STREAM_2D);
    let classes = cfg.num_classes();
    let cam = &scene.camera;
    let curve = &profile.confidence;
    let mut out = Vec::new();
    for (i, obj) in scene.objects.iter().enumerate() {
        let Ok(gt) = project_box_to_2d(cam, &obj.bbox) else {
            continue;
        };
        let occ = occlusion_fraction(scene, i).unwrap_or(0.0);
        if rng.random_bool(profile.miss_probability(occ)) {
            continue;
        }
        let predicted = sample_index(&mut rng, &profile.confusion[obj.class]);
        let bbox = profile.perturb(&mut rng, &gt, cam);
        let quality = iou2d(&bbox, &gt);
        let score = sigmoid(curve.logit(&mut rng, predicted, quality, distance(&obj.bbox), occ));
        let runner = runner_up(&mut rng, classes, predicted, Some(obj.class), profile.runner_up);
        out.push(Detection2D::new(bbox, class_probs(classes, predicted, score, runner)));
    }
    for c in &scene.clutter {
        if !rng.random_bool(profile.clutter_detect) {
            continue;
        }
        let Ok(gt) = project_box_to_2d(cam, c) else {
            continue;
        };
        let predicted = sample_index(&mut rng, &profile.clutter_classes);
        let bbox = profile.perturb(&mut rng, &gt, cam);
        let z = curve.logit(&mut rng, predicted, 0.0, distance(c), 0.0) + profile.clutter_bias;
        let runner = runner_up(&mut rng, classes, predicted, None, profile.runner_up);
        out.push(Detection2D::new(bbox, class_probs(classes, predicted, sigmoid(z), runner)));
    }
    for _ in 0..poisson(&mut rng, profile.fp_rate) {
        let class = rng.random_range(0..classes);
        let w: f64 = rng.random_range(20.0..200.0);
        let h = (w * rng.random_range(0.5..2.5)).min(cam.image_height * 0.8);
        let x0 = rng.random_range(0.0..(cam.image_width - w).max(1.0));
        let y0 = rng.random_range(0.0..(cam.image_height - h).max(1.0));
        let bbox = Box2D {
            x_min: x0,
            y_min: y0,
            x_max: x0 + w,
            y_max: y0 + h,
        }
        .clip(cam.image_width, cam.image_height);
        let z = curve.logit(&mut rng, class, 0.0, 0.0, 0.0) + profile.fp_bias;
        let runner = runner_up(&mut rng, classes, class, None, profile.runner_up);
        out.push(Detection2D::new(bbox, class_probs(classes, class, sigmoid(z), runner)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub scene: SceneConfig,
    pub sensor3d: SensorProfile3D,
    pub sensor2d: SensorProfile2D,
}

impl SimConfig {
    pub fn perfect() -> Self {
        let scene = SceneConfig::default();
        let c = scene.num_classes();
        Self {
            scene,
            sensor3d: SensorProfile3D::perfect(c),
            sensor2d: SensorProfile2D::perfect(c),
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        self.scene.validate()?;
        let c = self.scene.num_classes();
        self.sensor3d.validate(c)?;
        self.sensor2d.validate(c)
    }
}

/// A simulated frame: the scene, its ground truth and both sensors' output.
#[derive(Debug, Clone, PartialEq)]
pub struct SimFrame {
    pub scene: Scene,
    /// Projected ground-truth boxes, parallel to `scene.objects`.
    pub gt2d: Vec<Box2D>,
    /// Occlusion fraction per object.
    pub occlusion: Vec<f64>,
    pub dets2d: Vec<Detection2D>,
    pub dets3d: Vec<Detection3D>,
}

pub fn simulate_frame(cfg: &SimConfig, frame_id: u64, seed: u64) -> SimFrame {
    let scene = sample_scene(&cfg.scene, frame_id, seed);
    let gt2d = scene
        .objects
        .iter()
        .map(|o| project_box_to_2d(&scene.camera, &o.bbox).expect("placement keeps objects inside the image"))
        .collect();
    let occlusion = (0..scene.objects.len())
        .map(|i| occlusion_fraction(&scene, i).unwrap_or(0.0))
        .collect();
    let dets3d = render_3d_detections(&scene, &cfg.scene, &cfg.sensor3d, seed);
    let dets2d = render_2d_detections(&scene, &cfg.scene, &cfg.sensor2d, seed);
    SimFrame {
        scene,
        gt2d,
        occlusion,
        dets2d,
        dets3d,
    }
}

/// Frames `0..frames`, each from its own random stream.
pub fn simulate_corpus(cfg: &SimConfig, frames: usize, seed: u64, exec: Exec) -> Vec<SimFrame> {
    exec.map_range(frames, |i| simulate_frame(cfg, i as u64, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
        SimConfig::perfect().validate().unwrap();
        let mut bad = SensorProfile3D::default();
        bad.confusion[1][1] = 0.5;
        assert!(matches!(bad.validate(3), Err(ProfileError::RowSum { row: 1, .. })));
        let mut bad2 = SensorProfile2D::default();
        bad2.miss_base = 1.5;
        assert!(bad2.validate(3).is_err());
    }

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SceneConfig::default();
        assert_eq!(sample_scene(&cfg, 3, 9), sample_scene(&cfg, 3, 9));
        assert_ne!(sample_scene(&cfg, 3, 9), sample_scene(&cfg, 4, 9));
    }

    #[test]
    fn empty_config_gives_empty_scene() {
        let cfg = SceneConfig {
            min_objects: 0,
            max_objects: 0,
            min_clutter: 0,
            max_clutter: 0,
            ..SceneConfig::default()
        };
        let s = sample_scene(&cfg, 0, 1);
        assert!(s.objects.is_empty() && s.clutter.is_empty());
    }

    #[test]
    fn objects_rest_on_ground_inside_image() {
        let cfg = SceneConfig::default();
        for f in 0..50 {
            let s = sample_scene(&cfg, f, 2);
            for o in &s.objects {
                let (_, bottom) = o.bbox.vertical_extent();
                assert!((bottom - cfg.camera_height).abs() < 1e-9);
                let t = tight_box_unclipped(&s.camera, &o.bbox).unwrap();
                assert!(t.x_min >= 0.0 && t.x_max <= s.camera.image_width);
            }
        }
    }

    #[test]
    fn covered_fraction_cases() {
        let t = Box2D::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(covered_fraction(&t, &[]), 0.0);
        let half = Box2D::new(5.0, 0.0, 15.0, 10.0).unwrap();
        assert!((covered_fraction(&t, &[half]) - 0.5).abs() < 1e-12);
        // Overlapping occluders are not double counted.
        let quarter = Box2D::new(5.0, 5.0, 20.0, 20.0).unwrap();
        assert!((covered_fraction(&t, &[half, quarter]) - 0.5).abs() < 1e-12);
        let big = Box2D::new(-5.0, -5.0, 20.0, 20.0).unwrap();
        assert_eq!(covered_fraction(&t, &[big]), 1.0);
    }

    fn scene_with(objects: Vec<Box3D>) -> Scene {
        Scene {
            frame_id: 0,
            seed: 0,
            camera: CameraModel::kitti_like(),
            objects: objects.into_iter().map(|bbox| SceneObject { class: 0, bbox }).collect(),
            clutter: vec![],
        }
    }

    #[test]
    fn occlusion_examples() {
        let near = Box3D::new(0.0, 1.0, 10.0, 4.0, 4.0, 4.0, 0.0).unwrap();
        let lone = scene_with(vec![near]);
        assert_eq!(occlusion_fraction(&lone, 0).unwrap(), 0.0);

        let far = Box3D::new(0.0, 1.0, 20.0, 1.0, 1.0, 1.0, 0.0).unwrap();
        let hidden = scene_with(vec![near, far]);
        assert_eq!(occlusion_fraction(&hidden, 1).unwrap(), 1.0);
        assert_eq!(occlusion_fraction(&hidden, 0).unwrap(), 0.0);

        let behind = scene_with(vec![near, Box3D::new(0.0, 0.0, -5.0, 1.0, 1.0, 1.0, 0.0).unwrap()]);
        assert!(occlusion_fraction(&behind, 1).is_err());
    }

    #[test]
    fn perfect_sensors_reproduce_ground_truth() {
        let cfg = SimConfig::perfect();
        for f in 0..20 {
            let frame = simulate_frame(&cfg, f, 5);
            let n = frame.scene.objects.len();
            assert_eq!(frame.dets3d.len(), n);
            assert_eq!(frame.dets2d.len(), n);
            for (i, o) in frame.scene.objects.iter().enumerate() {
                assert_eq!(frame.dets3d[i].bbox, o.bbox);
                assert_eq!(frame.dets3d[i].probs, ClassProbs::one_hot(3, o.class));
                assert_eq!(frame.dets2d[i].bbox, frame.gt2d[i]);
                assert_eq!(frame.dets2d[i].probs, ClassProbs::one_hot(3, o.class));
            }
        }
    }

    #[test]
    fn certain_miss_leaves_only_false_positives() {
        let mut cfg = SimConfig::default();
        cfg.sensor3d.miss_near = 1.0;
        cfg.sensor3d.miss_far = 1.0;
        cfg.sensor3d.clutter_detect = 0.0;
        cfg.sensor2d.miss_base = 1.0;
        cfg.sensor2d.clutter_detect = 0.0;
        let mut total = 0;
        for f in 0..100 {
            let frame = simulate_frame(&cfg, f, 1);
            for d in &frame.dets3d {
                assert!(frame.scene.objects.iter().all(|o| iou3d(&o.bbox, &d.bbox) < 0.99));
            }
            total += frame.dets3d.len() + frame.dets2d.len();
        }
        assert!(total > 0);
    }

    #[test]
    fn corpus_is_identical_across_strategies() {
        let cfg = SimConfig::default();
        let a = simulate_corpus(&cfg, 30, 17, Exec::Sequential);
        let b = simulate_corpus(&cfg, 30, 17, Exec::Parallel);
        assert_eq!(a, b);
    }

    #[test]
    fn probabilities_keep_the_predicted_class_on_top() {
        for &(s, ratio) in &[(0.1, 0.99), (0.5, 0.6), (0.9, 0.9), (1.0, 0.9)] {
            let p = class_probs(3, 2, s, Some((0, ratio)));
            assert_eq!(p.argmax(), 2);
            assert_eq!(p.max(), s);
        }
    }
}
