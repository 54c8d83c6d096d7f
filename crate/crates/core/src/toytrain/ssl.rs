//! The teacher-student loop: labeled supervision, pseudo-label supervision
//! (confidence-thresholded or 2D-3D matched), the 2D-3D consistency term,
//! SGD on the students and EMA updates of the teachers.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::matchcost::{consistency_loss, ConsistencyWeights, CostWeights};
use crate::metrics::{average_precision, default_iou_threshold, iou3d, pr_curve, GroundTruth, Ranked};
use crate::geometry2d::iou2d;
use crate::pseudolabel::{ema_momentum, ema_update, match_teachers, pair_for_consistency, TAU_2D, TAU_3D, TAU_HUNG};
use crate::simulator::{SceneConfig, SimConfig, SimFrame};

use super::detector::{toy_forward_2d, toy_forward_3d, Modality, ToyDetection2D, ToyDetection3D, ToyDetector};
use super::loss::{supervised_loss_2d, supervised_loss_2d_ignoring, supervised_loss_3d, supervised_loss_3d_ignoring, Label2D, Label3D, SupervisionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SslMode {
    LabeledOnly,
    Confidence,
    DetMatch,
}

impl SslMode {
    pub const ALL: [SslMode; 3] = [SslMode::LabeledOnly, SslMode::Confidence, SslMode::DetMatch];

    pub fn name(self) -> &'static str {
        match self {
            SslMode::LabeledOnly => "labeled-only",
            SslMode::Confidence => "confidence",
            SslMode::DetMatch => "detmatch",
        }
    }
}

impl fmt::Display for SslMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SslMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SslMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?}; expected labeled-only, confidence or detmatch"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslConfig {
    /// Weight of the unlabeled terms.
    pub lambda_u: f64,
    pub steps: usize,
    pub pretrain_steps: usize,
    pub lr: f64,
    /// Frames per batch from each of the labeled and unlabeled pools.
    pub batch_frames: usize,
    /// Fraction of the training corpus that carries labels.
    pub labeled_fraction: f64,
    pub ema_ramp_steps: usize,
    /// Box-noise multiplier for the teachers' (weak) view.
    pub weak_noise: f64,
    /// Box-noise multiplier for the students' (strong) view.
    pub strong_noise: f64,
    pub tau_2d: f64,
    pub tau_3d: f64,
    pub tau_hung: f64,
    pub cost: CostWeights,
    pub consistency: ConsistencyWeights,
    pub supervision_3d: SupervisionConfig,
    pub supervision_2d: SupervisionConfig,
    pub unlabeled_background: UnlabeledBackground,
}

/// Which unlabeled student predictions without a pseudo-label are pushed
/// toward background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnlabeledBackground {
    /// Every one.
    All,
    /// Those not overlapping any teacher detection; the rest are ignored.
    OutsideTeacher,
    /// None: unlabeled frames supply positives only.
    Off,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            lambda_u: 1.0,
            steps: 1000,
            pretrain_steps: 1000,
            lr: 0.01,
            batch_frames: 4,
            labeled_fraction: 0.1,
            ema_ramp_steps: 1000,
            weak_noise: 1.0,
            strong_noise: 1.5,
            tau_2d: TAU_2D,
            tau_3d: TAU_3D,
            tau_hung: TAU_HUNG,
            cost: CostWeights::default(),
            consistency: ConsistencyWeights::default(),
            supervision_3d: SupervisionConfig::default(),
            supervision_2d: SupervisionConfig {
                match_iou: 0.5,
                ..SupervisionConfig::default()
            },
            unlabeled_background: UnlabeledBackground::OutsideTeacher,
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return Err(format!("lambda_u must be >= 0, got {}", self.lambda_u));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(format!("lr must be >= 0, got {}", self.lr));
        }
        if self.batch_frames == 0 {
            return Err("batch_frames must be positive".into());
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(format!("labeled_fraction must be in (0, 1), got {}", self.labeled_fraction));
        }
        for (name, t) in [("tau_2d", self.tau_2d), ("tau_3d", self.tau_3d)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(format!("{name} must be in [0, 1], got {t}"));
            }
        }
        self.cost.validate().map_err(|e| e.to_string())?;
        self.consistency.validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModels {
    pub student2d: ToyDetector,
    pub student3d: ToyDetector,
    pub teacher2d: ToyDetector,
    pub teacher3d: ToyDetector,
}

impl ToyModels {
    pub fn new(scene: &SceneConfig) -> Self {
        let d2 = ToyDetector::for_scene(Modality::Image, scene);
        let d3 = ToyDetector::for_scene(Modality::Lidar, scene);
        Self {
            student2d: d2.clone(),
            student3d: d3.clone(),
            teacher2d: d2,
            teacher3d: d3,
        }
    }
}

/// Loss terms of one step, each averaged over the batch frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub labeled_2d: f64,
    pub labeled_3d: f64,
    /// Absent in labeled-only mode.
    pub unlabeled_2d: Option<f64>,
    pub unlabeled_3d: Option<f64>,
    /// Present in detmatch mode only.
    pub consistency: Option<f64>,
    pub total: f64,
    pub pseudo_labels_2d: usize,
    pub pseudo_labels_3d: usize,
    /// Largest per-frame excess of 3D pseudo-labels over the smaller teacher
    /// detection count; zero whenever labels come from one-to-one matching.
    pub pseudo_label_excess: usize,
    /// Labeled loss of the student and the teacher on a fixed probe batch.
    pub student_probe: f64,
    pub teacher_probe: f64,
}

/// Gradients of the total loss in the student parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrads {
    pub grad2d: Vec<f64>,
    pub grad3d: Vec<f64>,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination.
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Noise seeds for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepSeeds {
    pub student: u64,
    pub teacher: u64,
}

impl StepSeeds {
    pub fn for_step(run_seed: u64, step: usize) -> Self {
        let base = mix(run_seed, step as u64);
        Self {
            student: mix(base, 1),
            teacher: mix(base, 2),
        }
    }
}

struct Views {
    sim_weak: SimConfig,
    sim_strong: SimConfig,
}

impl Views {
    fn new(sim: &SimConfig, cfg: &SslConfig) -> Self {
        let scaled = |f: f64| SimConfig {
            scene: sim.scene.clone(),
            sensor3d: sim.sensor3d.with_noise_scale(f),
            sensor2d: sim.sensor2d.with_noise_scale(f),
        };
        Self {
            sim_weak: scaled(cfg.weak_noise),
            sim_strong: scaled(cfg.strong_noise),
        }
    }
}

fn forward3(det: &ToyDetector, f: &SimFrame, sim: &SimConfig, seed: u64) -> Vec<ToyDetection3D> {
    toy_forward_3d(det, &f.scene, &sim.scene, &sim.sensor3d, seed)
}

fn forward2(det: &ToyDetector, f: &SimFrame, sim: &SimConfig, seed: u64) -> Vec<ToyDetection2D> {
    toy_forward_2d(det, &f.scene, &sim.scene, &sim.sensor2d, seed)
}

fn gt_labels(f: &SimFrame) -> (Vec<Label2D>, Vec<Label3D>) {
    let l2 = f
        .scene
        .objects
        .iter()
        .zip(&f.gt2d)
        .map(|(o, b)| Label2D { bbox: *b, class: o.class })
        .collect();
    let l3 = f
        .scene
        .objects
        .iter()
        .map(|o| Label3D {
            bbox: o.bbox,
            class: o.class,
        })
        .collect();
    (l2, l3)
}

fn add_scaled(acc: &mut [f64], g: &[f64], s: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += s * b;
    }
}

/// Labeled loss of a detector pair on `frames` under one noise seed.
fn labeled_loss(
    d2: &ToyDetector,
    d3: &ToyDetector,
    frames: &[&SimFrame],
    sim: &SimConfig,
    cfg: &SslConfig,
    seed: u64,
) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let n = frames.len().max(1) as f64;
    let (mut l2, mut l3) = (0.0, 0.0);
    let mut g2 = vec![0.0; d2.params.len()];
    let mut g3 = vec![0.0; d3.params.len()];
    for f in frames {
        let (lab2, lab3) = gt_labels(f);
        let s3 = supervised_loss_3d(d3, &forward3(d3, f, sim, seed), &lab3, &cfg.supervision_3d);
        let s2 = supervised_loss_2d(d2, &forward2(d2, f, sim, seed), &lab2, &cfg.supervision_2d);
        l3 += s3.total / n;
        l2 += s2.total / n;
        add_scaled(&mut g3, &s3.grad, 1.0 / n);
        add_scaled(&mut g2, &s2.grad, 1.0 / n);
    }
    (l2, l3, g2, g3)
}

/// Total loss of one step and its gradient in the student parameters. The
/// probe entries of the report are left at zero.
pub fn step_loss(
    models: &ToyModels,
    labeled: &[&SimFrame],
    unlabeled: &[&SimFrame],
    sim: &SimConfig,
    cfg: &SslConfig,
    mode: SslMode,
    step: usize,
    seeds: StepSeeds,
) -> (LossReport, StepGrads) {
    let views = Views::new(sim, cfg);
    let (labeled_2d, labeled_3d, mut grad2d, mut grad3d) = labeled_loss(
        &models.student2d,
        &models.student3d,
        labeled,
        &views.sim_strong,
        cfg,
        seeds.student,
    );
    let mut report = LossReport {
        step,
        labeled_2d,
        labeled_3d,
        unlabeled_2d: None,
        unlabeled_3d: None,
        consistency: None,
        total: labeled_2d + labeled_3d,
        pseudo_labels_2d: 0,
        pseudo_labels_3d: 0,
        pseudo_label_excess: 0,
        student_probe: 0.0,
        teacher_probe: 0.0,
    };
    if mode == SslMode::LabeledOnly {
        return (report, StepGrads { grad2d, grad3d });
    }

    let n = unlabeled.len().max(1) as f64;
    let w = cfg.lambda_u / n;
    let (mut u2, mut u3, mut cons) = (0.0, 0.0, 0.0);
    for f in unlabeled {
        let cam = &f.scene.camera;
        let t3: Vec<_> = forward3(&models.teacher3d, f, &views.sim_weak, seeds.teacher)
            .into_iter()
            .map(|d| d.det)
            .collect();
        let t2: Vec<_> = forward2(&models.teacher2d, f, &views.sim_weak, seeds.teacher)
            .into_iter()
            .map(|d| d.det)
            .collect();
        let s3 = forward3(&models.student3d, f, &views.sim_strong, seeds.student);
        let s2 = forward2(&models.student2d, f, &views.sim_strong, seeds.student);

        let (lab2, lab3): (Vec<Label2D>, Vec<Label3D>) = match mode {
            SslMode::Confidence => (
                t2.iter()
                    .filter(|d| d.score() > cfg.tau_2d)
                    .map(|d| Label2D {
                        bbox: d.bbox,
                        class: d.class(),
                    })
                    .collect(),
                t3.iter()
                    .filter(|d| d.score() > cfg.tau_3d)
                    .map(|d| Label3D {
                        bbox: d.bbox,
                        class: d.class(),
                    })
                    .collect(),
            ),
            _ => match_teachers(&t2, &t3, cam, &cfg.cost, cfg.tau_hung)
                .into_iter()
                .map(|p| {
                    (
                        Label2D {
                            bbox: p.det2d.bbox,
                            class: p.det2d.class(),
                        },
                        Label3D {
                            bbox: p.det3d.bbox,
                            class: p.det3d.class(),
                        },
                    )
                })
                .unzip(),
        };
        report.pseudo_labels_2d += lab2.len();
        report.pseudo_labels_3d += lab3.len();
        report.pseudo_label_excess = report
            .pseudo_label_excess
            .max(lab3.len().saturating_sub(t2.len().min(t3.len())));

        let (l3, l2) = match cfg.unlabeled_background {
            UnlabeledBackground::All => (
                supervised_loss_3d(&models.student3d, &s3, &lab3, &cfg.supervision_3d),
                supervised_loss_2d(&models.student2d, &s2, &lab2, &cfg.supervision_2d),
            ),
            UnlabeledBackground::OutsideTeacher => {
                let ig3: Vec<_> = t3.iter().map(|d| d.bbox).collect();
                let ig2: Vec<_> = t2.iter().map(|d| d.bbox).collect();
                (
                    supervised_loss_3d_ignoring(&models.student3d, &s3, &lab3, &ig3, &cfg.supervision_3d),
                    supervised_loss_2d_ignoring(&models.student2d, &s2, &lab2, &ig2, &cfg.supervision_2d),
                )
            }
            UnlabeledBackground::Off => {
                let off = |c: &SupervisionConfig| SupervisionConfig { background: false, ..*c };
                (
                    supervised_loss_3d(&models.student3d, &s3, &lab3, &off(&cfg.supervision_3d)),
                    supervised_loss_2d(&models.student2d, &s2, &lab2, &off(&cfg.supervision_2d)),
                )
            }
        };
        u3 += l3.total / n;
        u2 += l2.total / n;
        add_scaled(&mut grad3d, &l3.grad, w);
        add_scaled(&mut grad2d, &l2.grad, w);

        if mode == SslMode::DetMatch {
            let student_dets: Vec<_> = s3.iter().map(|d| d.det.clone()).collect();
            for p in pair_for_consistency(&t2, &student_dets, cam, &cfg.cost, cfg.tau_hung) {
                let sd = &s3[p.index3d];
                let Ok(c) = consistency_loss(&p.det2d, &sd.det.bbox, &sd.logits, cam, &cfg.consistency) else {
                    continue;
                };
                cons += c.loss / n;
                let d = &models.student3d;
                let mut g = vec![0.0; d.params.len()];
                d.accumulate_box_grad(sd.base_class, &c.grads.bbox, &sd.moves, &mut g);
                d.accumulate_logit_grad(&sd.cue, &c.grads.logits, &mut g);
                add_scaled(&mut grad3d, &g, w);
            }
        }
    }
    report.unlabeled_2d = Some(u2);
    report.unlabeled_3d = Some(u3);
    report.total += cfg.lambda_u * (u2 + u3);
    if mode == SslMode::DetMatch {
        report.consistency = Some(cons);
        report.total += cfg.lambda_u * cons;
    }
    (report, StepGrads { grad2d, grad3d })
}

/// Labeled and unlabeled pools of a training corpus: the first
/// `labeled_fraction` of the frames carry labels.
pub fn split_corpus(frames: &[SimFrame], labeled_fraction: f64) -> (Vec<&SimFrame>, Vec<&SimFrame>) {
    let n_lab = ((frames.len() as f64 * labeled_fraction).round() as usize).clamp(1, frames.len().saturating_sub(1).max(1));
    let (a, b) = frames.split_at(n_lab.min(frames.len()));
    (a.iter().collect(), b.iter().collect())
}

fn sample_batch<'a>(pool: &[&'a SimFrame], k: usize, rng: &mut ChaCha8Rng) -> Vec<&'a SimFrame> {
    (0..k).filter_map(|_| pool.choose(rng).copied()).collect()
}

/// Probe batch used to track teacher and student stability.
const PROBE_FRAMES: usize = 4;
const PROBE_SEED: u64 = 0x5EED;

/// One SSL step: gradient descent on the students, EMA on the teachers.
#[allow(clippy::too_many_arguments)]
pub fn ssl_step(
    models: &ToyModels,
    labeled: &[&SimFrame],
    unlabeled: &[&SimFrame],
    probe: &[&SimFrame],
    sim: &SimConfig,
    cfg: &SslConfig,
    mode: SslMode,
    step: usize,
    seeds: StepSeeds,
) -> (ToyModels, LossReport) {
    let (mut report, grads) = step_loss(models, labeled, unlabeled, sim, cfg, mode, step, seeds);
    let (p2, p3, _, _) = labeled_loss(&models.student2d, &models.student3d, probe, sim, cfg, PROBE_SEED);
    let (q2, q3, _, _) = labeled_loss(&models.teacher2d, &models.teacher3d, probe, sim, cfg, PROBE_SEED);
    report.student_probe = p2 + p3;
    report.teacher_probe = q2 + q3;

    let mut next = models.clone();
    for (p, g) in next.student2d.params.0.iter_mut().zip(&grads.grad2d) {
        *p -= cfg.lr * g;
    }
    for (p, g) in next.student3d.params.0.iter_mut().zip(&grads.grad3d) {
        *p -= cfg.lr * g;
    }
    let alpha = ema_momentum(step, cfg.ema_ramp_steps);
    next.teacher2d.params = ema_update(&models.teacher2d.params, &next.student2d.params, alpha).expect("same layout");
    next.teacher3d.params = ema_update(&models.teacher3d.params, &next.student3d.params, alpha).expect("same layout");
    (next, report)
}

/// Runs `steps` SSL steps from `init`, returning the final models and the
/// per-step reports.
#[allow(clippy::too_many_arguments)]
pub fn train(
    init: &ToyModels,
    labeled: &[&SimFrame],
    unlabeled: &[&SimFrame],
    sim: &SimConfig,
    cfg: &SslConfig,
    mode: SslMode,
    steps: usize,
    run_seed: u64,
) -> (ToyModels, Vec<LossReport>) {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(run_seed, 0xBA7C));
    let probe: Vec<&SimFrame> = labeled.iter().take(PROBE_FRAMES).copied().collect();
    let mut models = init.clone();
    let mut reports = Vec::with_capacity(steps);
    for step in 0..steps {
        let lab = sample_batch(labeled, cfg.batch_frames, &mut rng);
        let unl = if mode == SslMode::LabeledOnly {
            Vec::new()
        } else {
            sample_batch(unlabeled, cfg.batch_frames, &mut rng)
        };
        let (next, report) = ssl_step(&models, &lab, &unl, &probe, sim, cfg, mode, step, StepSeeds::for_step(run_seed, step));
        models = next;
        reports.push(report);
    }
    (models, reports)
}

/// Labeled-only training from zero parameters; teachers are set to the
/// final students.
pub fn pretrain(labeled: &[&SimFrame], sim: &SimConfig, cfg: &SslConfig, seed: u64) -> ToyModels {
    let init = ToyModels::new(&sim.scene);
    let (mut m, _) = train(&init, labeled, &[], sim, cfg, SslMode::LabeledOnly, cfg.pretrain_steps, mix(seed, 0x9E7));
    m.teacher2d = m.student2d.clone();
    m.teacher3d = m.student3d.clone();
    m
}

/// Per-class AP of a detector pair on evaluation frames, under a fixed noise
/// seed and the weak view.
pub fn evaluate_ap(d2: &ToyDetector, d3: &ToyDetector, frames: &[SimFrame], sim: &SimConfig, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let names = sim.scene.class_names();
    let mut dets3 = vec![Vec::new(); names.len()];
    let mut dets2 = vec![Vec::new(); names.len()];
    let mut gts3 = vec![Vec::new(); names.len()];
    let mut gts2 = vec![Vec::new(); names.len()];
    for (fi, f) in frames.iter().enumerate() {
        for d in forward3(d3, f, sim, seed) {
            dets3[d.det.class()].push(Ranked {
                frame: fi,
                quality: d.det.score(),
                item: d.det.bbox,
            });
        }
        for d in forward2(d2, f, sim, seed) {
            dets2[d.det.class()].push(Ranked {
                frame: fi,
                quality: d.det.score(),
                item: d.det.bbox,
            });
        }
        for (o, b) in f.scene.objects.iter().zip(&f.gt2d) {
            gts3[o.class].push(GroundTruth { frame: fi, item: o.bbox });
            gts2[o.class].push(GroundTruth { frame: fi, item: *b });
        }
    }
    let ap3 = (0..names.len())
        .map(|c| average_precision(&pr_curve(&dets3[c], &gts3[c], iou3d, default_iou_threshold(&names[c]))))
        .collect();
    let ap2 = (0..names.len())
        .map(|c| average_precision(&pr_curve(&dets2[c], &gts2[c], iou2d, default_iou_threshold(&names[c]))))
        .collect();
    (ap2, ap3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub mode: SslMode,
    pub seed: u64,
    pub ap2d: Vec<f64>,
    pub ap3d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub class_names: Vec<String>,
    /// AP of the shared pretrained initialization, per seed.
    pub init: Vec<ApRow>,
    /// Final teacher AP per mode and seed.
    pub rows: Vec<ApRow>,
}

impl ExperimentTable {
    pub fn row(&self, mode: SslMode, seed: u64) -> Option<&ApRow> {
        self.rows.iter().find(|r| r.mode == mode && r.seed == seed)
    }

    pub fn seeds(&self) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.iter().map(|r| r.seed).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    pub fn modes(&self) -> Vec<SslMode> {
        SslMode::ALL
            .into_iter()
            .filter(|m| self.rows.iter().any(|r| r.mode == *m))
            .collect()
    }

    /// Mean (2D, 3D) AP per class over seeds.
    pub fn mean(&self, mode: SslMode) -> (Vec<f64>, Vec<f64>) {
        let rows: Vec<&ApRow> = self.rows.iter().filter(|r| r.mode == mode).collect();
        let c = self.class_names.len();
        let n = rows.len().max(1) as f64;
        let avg = |get: fn(&ApRow) -> &Vec<f64>| -> Vec<f64> {
            (0..c).map(|k| rows.iter().map(|r| get(r)[k]).sum::<f64>() / n).collect()
        };
        (avg(|r| &r.ap2d), avg(|r| &r.ap3d))
    }

    /// CSV with one row per mode (mean over seeds) and per (mode, seed):
    /// AP in percent per class and modality, and the change against
    /// labeled-only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,seed");
        for m in ["2d", "3d"] {
            for c in &self.class_names {
                out.push_str(&format!(",ap{m}_{c},delta{m}_{c}"));
            }
        }
        out.push('\n');
        let base = self.mean(SslMode::LabeledOnly);
        let has_base = self.rows.iter().any(|r| r.mode == SslMode::LabeledOnly);
        let mut line = |label: String, seed: String, ap2: &[f64], ap3: &[f64], b2: &[f64], b3: &[f64]| {
            out.push_str(&format!("{label},{seed}"));
            for (ap, b) in [(ap2, b2), (ap3, b3)] {
                for k in 0..ap.len() {
                    let delta = if has_base { format!("{:.2}", 100.0 * (ap[k] - b[k])) } else { String::new() };
                    out.push_str(&format!(",{:.2},{}", 100.0 * ap[k], delta));
                }
            }
            out.push('\n');
        };
        for mode in self.modes() {
            let (m2, m3) = self.mean(mode);
            line(mode.to_string(), "mean".into(), &m2, &m3, &base.0, &base.1);
        }
        for r in &self.rows {
            let b = self.row(SslMode::LabeledOnly, r.seed);
            let (b2, b3) = b.map(|b| (b.ap2d.clone(), b.ap3d.clone())).unwrap_or_default();
            let (b2, b3) = if b2.is_empty() { (r.ap2d.clone(), r.ap3d.clone()) } else { (b2, b3) };
            line(r.mode.to_string(), r.seed.to_string(), &r.ap2d, &r.ap3d, &b2, &b3);
        }
        out
    }
}

/// Seed used for the evaluation view, shared by every mode and seed.
pub const EVAL_SEED: u64 = 0xE7A1;

/// Trains every mode from a shared labeled-pretrained initialization per
/// seed and reports the final teachers' AP on `eval`.
pub fn run_experiment(
    train_frames: &[SimFrame],
    eval: &[SimFrame],
    sim: &SimConfig,
    cfg: &SslConfig,
    modes: &[SslMode],
    seeds: &[u64],
    exec: Exec,
) -> ExperimentTable {
    let (labeled, unlabeled) = split_corpus(train_frames, cfg.labeled_fraction);
    let inits: Vec<ToyModels> = exec.map(seeds, |&s| pretrain(&labeled, sim, cfg, s));
    let init_rows = seeds
        .iter()
        .zip(&inits)
        .map(|(&seed, m)| {
            let (ap2d, ap3d) = evaluate_ap(&m.teacher2d, &m.teacher3d, eval, sim, EVAL_SEED);
            ApRow {
                mode: SslMode::LabeledOnly,
                seed,
                ap2d,
                ap3d,
            }
        })
        .collect();
    let jobs: Vec<(usize, SslMode)> = (0..seeds.len()).flat_map(|i| modes.iter().map(move |&m| (i, m))).collect();
    let rows = exec.map(&jobs, |&(i, mode)| {
        let (m, _) = train(&inits[i], &labeled, &unlabeled, sim, cfg, mode, cfg.steps, mix(seeds[i], 0x7EA));
        let (ap2d, ap3d) = evaluate_ap(&m.teacher2d, &m.teacher3d, eval, sim, EVAL_SEED);
        ApRow {
            mode,
            seed: seeds[i],
            ap2d,
            ap3d,
        }
    });
    ExperimentTable {
        class_names: sim.scene.class_names(),
        init: init_rows,
        rows,
    }
}
