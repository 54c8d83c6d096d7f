//! Corpus-level measurements on simulated frames: how well confidence and
//! matching cost track box quality, how clean each pseudo-label set is, and
//! how recall varies with occlusion.

use serde::{Deserialize, Serialize};

use crate::detection::{Detection2D, Detection3D};
use crate::exec::Exec;
use crate::geometry3d::{Box3D, CameraModel};
use crate::geometry2d::iou2d;
use crate::metrics::{average_precision, curve_from_outcomes, default_iou_threshold, greedy_match, iou3d, quality_correlation, Correlation, EvalRecord, GroundTruth, Ranked, TooFewRecords};
use crate::pseudolabel::{confidence_filter, hungarian_match};
use crate::matchcost::CostWeights;
use crate::simulator::SimFrame;

/// A frame with both sensors' detections and 3D ground truth.
pub trait AnnotatedFrame: Sync {
    fn frame_id(&self) -> u64;
    fn camera(&self) -> &CameraModel;
    fn dets2d(&self) -> &[Detection2D];
    fn dets3d(&self) -> &[Detection3D];
    /// Ground-truth (class, box) pairs.
    fn gt3d(&self) -> Vec<(usize, Box3D)>;
}

impl AnnotatedFrame for SimFrame {
    fn frame_id(&self) -> u64 {
        self.scene.frame_id
    }

    fn camera(&self) -> &CameraModel {
        &self.scene.camera
    }

    fn dets2d(&self) -> &[Detection2D] {
        &self.dets2d
    }

    fn dets3d(&self) -> &[Detection3D] {
        &self.dets3d
    }

    fn gt3d(&self) -> Vec<(usize, Box3D)> {
        self.scene.objects.iter().map(|o| (o.class, o.bbox)).collect()
    }
}

/// One 3D detection that received a 2D partner in the Hungarian assignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityRow {
    pub frame: u64,
    pub index3d: usize,
    pub class: usize,
    pub confidence: f64,
    pub neg_cost: f64,
    /// Best 3D IoU against any ground-truth object in the frame.
    pub gt_iou: f64,
}

pub fn quality_rows<F: AnnotatedFrame>(frames: &[F], weights: &CostWeights, exec: Exec) -> Vec<QualityRow> {
    let per_frame = exec.map(frames, |f| {
        let gt = f.gt3d();
        hungarian_match(f.dets2d(), f.dets3d(), f.camera(), weights, f64::INFINITY, Exec::Sequential)
            .into_iter()
            .map(|p| QualityRow {
                frame: f.frame_id(),
                index3d: p.index3d,
                class: p.det3d.class(),
                confidence: p.det3d.score(),
                neg_cost: -p.cost,
                gt_iou: gt.iter().map(|(_, b)| iou3d(&p.det3d.bbox, b)).fold(0.0, f64::max),
            })
            .collect::<Vec<_>>()
    });
    per_frame.into_iter().flatten().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityComparison {
    pub confidence: Correlation,
    pub neg_cost: Correlation,
    pub records: usize,
}

pub fn compare_quality_measures(rows: &[QualityRow]) -> Result<QualityComparison, TooFewRecords> {
    let rec = |q: fn(&QualityRow) -> f64| -> Vec<EvalRecord> {
        rows.iter()
            .map(|r| EvalRecord {
                quality: q(r),
                best_iou: r.gt_iou,
                gt: None,
            })
            .collect()
    };
    Ok(QualityComparison {
        confidence: quality_correlation(&rec(|r| r.confidence))?,
        neg_cost: quality_correlation(&rec(|r| r.neg_cost))?,
        records: rows.len(),
    })
}

/// How pseudo-labels are selected from the teachers' detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    /// 3D detections with confidence above the threshold.
    Confidence3D { tau: f64 },
    /// 3D detections matched to a 2D detection below the cost threshold.
    DetMatch { tau_hung: f64, weights: CostWeights },
}

impl Selection {
    pub fn select<F: AnnotatedFrame>(&self, frame: &F) -> Vec<Detection3D> {
        match self {
            Selection::Confidence3D { tau } => {
                confidence_filter(frame.dets3d(), *tau).expect("threshold validated by caller")
            }
            Selection::DetMatch { tau_hung, weights } => hungarian_match(
                frame.dets2d(),
                frame.dets3d(),
                frame.camera(),
                weights,
                *tau_hung,
                Exec::Sequential,
            )
            .into_iter()
            .map(|p| p.det3d)
            .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassStats {
    pub tp: usize,
    pub fp: usize,
    pub num_gt: usize,
}

impl ClassStats {
    pub fn precision(&self) -> f64 {
        let n = self.tp + self.fp;
        if n == 0 {
            1.0
        } else {
            self.tp as f64 / n as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.num_gt == 0 {
            0.0
        } else {
            self.tp as f64 / self.num_gt as f64
        }
    }
}

/// Per-class true/false positive counts of a pseudo-label set. A label is a
/// true positive when it claims a same-class ground-truth box at the class's
/// default 3D IoU threshold.
pub fn pseudo_label_stats<F: AnnotatedFrame>(frames: &[F], class_names: &[String], selection: &Selection, exec: Exec) -> Vec<ClassStats> {
    let per_frame = exec.map(frames, |f| {
        let labels = selection.select(f);
        let gt = f.gt3d();
        let mut stats = vec![ClassStats::default(); class_names.len()];
        for (c, name) in class_names.iter().enumerate() {
            let dets: Vec<Ranked<_>> = labels
                .iter()
                .filter(|d| d.class() == c)
                .map(|d| Ranked {
                    frame: 0,
                    quality: d.score(),
                    item: d.bbox,
                })
                .collect();
            let gts: Vec<GroundTruth<_>> = gt
                .iter()
                .filter(|(k, _)| *k == c)
                .map(|(_, b)| GroundTruth { frame: 0, item: *b })
                .collect();
            let outcomes = greedy_match(&dets, &gts, iou3d, default_iou_threshold(name));
            let tp = outcomes.iter().filter(|o| o.is_tp()).count();
            stats[c] = ClassStats {
                tp,
                fp: dets.len() - tp,
                num_gt: gts.len(),
            };
        }
        stats
    });
    let mut total = vec![ClassStats::default(); class_names.len()];
    for stats in per_frame {
        for (t, s) in total.iter_mut().zip(stats) {
            t.tp += s.tp;
            t.fp += s.fp;
            t.num_gt += s.num_gt;
        }
    }
    total
}

/// Recall of each sensor within one occlusion bucket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRecall {
    pub lower: f64,
    pub upper: f64,
    pub num_gt: usize,
    pub recall2d: f64,
    pub recall3d: f64,
}

/// Class-agnostic recall per occlusion bucket. `edges` are the bucket
/// boundaries (n + 1 values for n buckets; the last bucket includes its upper
/// edge). Both sensors match greedily at `iou_threshold`, the 2D sensor
/// against projected ground truth.
pub fn occlusion_recall(frames: &[SimFrame], edges: &[f64], iou_threshold: f64) -> Vec<OcclusionRecall> {
    let buckets = edges.len().saturating_sub(1);
    let mut found2d = vec![0usize; buckets];
    let mut found3d = vec![0usize; buckets];
    let mut totals = vec![0usize; buckets];
    let bucket_of = |occ: f64| {
        (0..buckets).find(|&b| occ >= edges[b] && (occ < edges[b + 1] || (b + 1 == buckets && occ <= edges[b + 1])))
    };
    for f in frames {
        let d2: Vec<Ranked<_>> = f
            .dets2d
            .iter()
            .map(|d| Ranked {
                frame: 0,
                quality: d.score(),
                item: d.bbox,
            })
            .collect();
        let g2: Vec<GroundTruth<_>> = f.gt2d.iter().map(|&b| GroundTruth { frame: 0, item: b }).collect();
        let d3: Vec<Ranked<_>> = f
            .dets3d
            .iter()
            .map(|d| Ranked {
                frame: 0,
                quality: d.score(),
                item: d.bbox,
            })
            .collect();
        let g3: Vec<GroundTruth<_>> = f
            .scene
            .objects
            .iter()
            .map(|o| GroundTruth { frame: 0, item: o.bbox })
            .collect();
        let mut hit2 = vec![false; g2.len()];
        let mut hit3 = vec![false; g3.len()];
        for o in greedy_match(&d2, &g2, iou2d, iou_threshold) {
            if let Some(g) = o.gt {
                hit2[g] = true;
            }
        }
        for o in greedy_match(&d3, &g3, iou3d, iou_threshold) {
            if let Some(g) = o.gt {
                hit3[g] = true;
            }
        }
        for (i, &occ) in f.occlusion.iter().enumerate() {
            if let Some(b) = bucket_of(occ) {
                totals[b] += 1;
                found2d[b] += hit2[i] as usize;
                found3d[b] += hit3[i] as usize;
            }
        }
    }
    (0..buckets)
        .map(|b| {
            let rate = |k: usize| if totals[b] == 0 { 0.0 } else { k as f64 / totals[b] as f64 };
            OcclusionRecall {
                lower: edges[b],
                upper: edges[b + 1],
                num_gt: totals[b],
                recall2d: rate(found2d[b]),
                recall3d: rate(found3d[b]),
            }
        })
        .collect()
}

/// Corpus-level 3D detection quality of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEval {
    pub class: String,
    pub iou_threshold: f64,
    pub num_gt: usize,
    pub num_dets: usize,
    pub tp: usize,
    pub fp: usize,
    /// Over all detections, regardless of confidence.
    pub precision: f64,
    pub recall: f64,
    pub ap: f64,
}

/// Evaluates per-frame 3D detections against the 3D ground truth of the
/// matching frames. `iou_threshold` overrides the per-class default.
pub fn evaluate_3d<F: AnnotatedFrame>(
    preds: &[Vec<Detection3D>],
    frames: &[F],
    class_names: &[String],
    iou_threshold: Option<f64>,
) -> Vec<ClassEval> {
    assert_eq!(preds.len(), frames.len(), "one prediction list per frame");
    let gts: Vec<Vec<(usize, Box3D)>> = frames.iter().map(|f| f.gt3d()).collect();
    class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let dets: Vec<Ranked<Box3D>> = preds
                .iter()
                .enumerate()
                .flat_map(|(fi, ds)| {
                    ds.iter().filter(|d| d.class() == c).map(move |d| Ranked {
                        frame: fi,
                        quality: d.score(),
                        item: d.bbox,
                    })
                })
                .collect();
            let gt: Vec<GroundTruth<Box3D>> = gts
                .iter()
                .enumerate()
                .flat_map(|(fi, g)| {
                    g.iter()
                        .filter(|(k, _)| *k == c)
                        .map(move |(_, b)| GroundTruth { frame: fi, item: *b })
                })
                .collect();
            let thresh = iou_threshold.unwrap_or_else(|| default_iou_threshold(name));
            let outcomes = greedy_match(&dets, &gt, iou3d, thresh);
            let qualities: Vec<f64> = dets.iter().map(|d| d.quality).collect();
            let curve = curve_from_outcomes(&qualities, &outcomes, gt.len());
            let stats = ClassStats {
                tp: outcomes.iter().filter(|o| o.is_tp()).count(),
                fp: outcomes.iter().filter(|o| !o.is_tp()).count(),
                num_gt: gt.len(),
            };
            ClassEval {
                class: name.clone(),
                iou_threshold: thresh,
                num_gt: gt.len(),
                num_dets: dets.len(),
                tp: stats.tp,
                fp: stats.fp,
                precision: stats.precision(),
                recall: stats.recall(),
                ap: average_precision(&curve),
            }
        })
        .collect()
}
