//! COCO-style detection evaluation: greedy TP/FP matching, 101-point
//! interpolated average precision, mAP over an IoU threshold grid, and the
//! greedy NMS used at inference.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assignment::GroundTruth;
use crate::error::{invalid, Result};
use crate::geometry::{iou, BBox};

pub const DEFAULT_NMS_IOU: f64 = 0.5;
pub const RECALL_POINTS: usize = 101;

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_id: usize,
    pub score: f64,
}

/// Ground truths and detections of one image.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    #[serde(default)]
    pub gts: Vec<GroundTruth>,
    #[serde(default)]
    pub dets: Vec<Detection>,
}

/// Detection indices by descending score, lower index first on ties.
fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// TP flags for single-class, single-image detections, aligned with `dets`.
///
/// Detections are visited by descending score; each takes the unmatched
/// ground truth it overlaps most and is a TP when that overlap reaches `theta`.
pub fn match_detections(dets: &[Detection], gts: &[BBox], theta: f64) -> Vec<bool> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for d in score_order(&scores) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let o = iou(&dets[d].bbox, gt);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((g, o));
            }
        }
        if let Some((g, o)) = best {
            if o >= theta {
                taken[g] = true;
                flags[d] = true;
            }
        }
    }
    flags
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    /// Scores in visiting order (descending).
    pub scores: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Precision/recall after each detection, swept by descending score.
pub fn pr_curve(flags: &[bool], scores: &[f64], n_gt: usize) -> PrCurve {
    let order = score_order(scores);
    let mut curve = PrCurve {
        scores: Vec::with_capacity(order.len()),
        precision: Vec::with_capacity(order.len()),
        recall: Vec::with_capacity(order.len()),
    };
    let (mut tp, mut fp) = (0usize, 0usize);
    for i in order {
        if flags[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        curve.scores.push(scores[i]);
        curve.precision.push(tp as f64 / (tp + fp) as f64);
        curve.recall.push(if n_gt > 0 {
            tp as f64 / n_gt as f64
        } else {
            0.0
        });
    }
    curve
}

/// 101-point interpolated AP. Classes without ground truth are skipped (`None`).
pub fn average_precision(flags: &[bool], scores: &[f64], n_gt: usize) -> Result<Option<f64>> {
    if flags.len() != scores.len() {
        return Err(invalid("flags", "flags and scores differ in length"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("scores", "non-finite detection score"));
    }
    if n_gt == 0 {
        return Ok(None);
    }
    Ok(Some(interpolated_ap(&pr_curve(flags, scores, n_gt))))
}

fn interpolated_ap(curve: &PrCurve) -> f64 {
    let mut envelope = curve.precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut total = 0.0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let first = curve.recall.partition_point(|&x| x < r);
        if first < envelope.len() {
            total += envelope[first];
        }
    }
    total / RECALL_POINTS as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub theta: f64,
    pub ap: Option<f64>,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub n_gt: usize,
    pub n_dets: usize,
    pub thresholds: Vec<ThresholdResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassReport>,
    /// Mean AP over evaluated classes at each threshold.
    pub ap_by_threshold: Vec<Option<f64>>,
    /// Mean over classes and thresholds; `None` when no ground truth exists.
    pub map: Option<f64>,
}

impl EvalReport {
    /// The same report with every precision/recall curve dropped.
    pub fn without_curves(mut self) -> Self {
        for c in &mut self.classes {
            for t in &mut c.thresholds {
                t.curve = PrCurve::default();
            }
        }
        self
    }

    pub fn ap_at(&self, theta: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|t| (t - theta).abs() < 1e-9)
            .and_then(|i| self.ap_by_threshold[i])
    }
}

/// AP for every class present in the data at every threshold, and their mean.
pub fn coco_map(images: &[ImageRecord], thresholds: &[f64]) -> Result<EvalReport> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(invalid("thresholds", "need at least one IoU threshold in [0, 1]"));
    }
    let mut class_ids: Vec<usize> = images
        .iter()
        .flat_map(|im| {
            im.gts
                .iter()
                .map(|g| g.class_id)
                .chain(im.dets.iter().map(|d| d.class_id))
        })
        .collect();
    class_ids.sort_unstable();
    class_ids.dedup();

    let mut classes = Vec::with_capacity(class_ids.len());
    for &c in &class_ids {
        let per_image: Vec<(Vec<Detection>, Vec<BBox>)> = images
            .iter()
            .map(|im| {
                (
                    im.dets.iter().filter(|d| d.class_id == c).copied().collect(),
                    im.gts.iter().filter(|g| g.class_id == c).map(|g| g.bbox).collect(),
                )
            })
            .collect();
        let n_gt: usize = per_image.iter().map(|(_, g)| g.len()).sum();
        let n_dets: usize = per_image.iter().map(|(d, _)| d.len()).sum();
        let mut results = Vec::with_capacity(thresholds.len());
        for &theta in thresholds {
            let mut flags = Vec::with_capacity(n_dets);
            let mut scores = Vec::with_capacity(n_dets);
            for (dets, gts) in &per_image {
                flags.extend(match_detections(dets, gts, theta));
                scores.extend(dets.iter().map(|d| d.score));
            }
            let ap = average_precision(&flags, &scores, n_gt)?;
            results.push(ThresholdResult {
                theta,
                ap,
                curve: pr_curve(&flags, &scores, n_gt),
            });
        }
        classes.push(ClassReport {
            class_id: c,
            n_gt,
            n_dets,
            thresholds: results,
        });
    }

    let ap_by_threshold: Vec<Option<f64>> = (0..thresholds.len())
        .map(|t| mean(classes.iter().filter_map(|c| c.thresholds[t].ap)))
        .collect();
    let map = mean(
        classes
            .iter()
            .flat_map(|c| c.thresholds.iter().filter_map(|r| r.ap)),
    );
    Ok(EvalReport {
        thresholds: thresholds.to_vec(),
        classes,
        ap_by_threshold,
        map,
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Indices kept by greedy NMS (suppression when IoU exceeds `iou_thr`),
/// in descending-score order.
pub fn nms_indices(dets: &[Detection], iou_thr: f64) -> Vec<usize> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let order = score_order(&scores);
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox) > iou_thr {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Single-class greedy NMS.
pub fn nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    nms_indices(dets, iou_thr).into_iter().map(|i| dets[i]).collect()
}

/// Per-class NMS over a mixed-class detection list.
pub fn batched_nms(dets: &[Detection], iou_thr: f64) -> Vec<Detection> {
    let mut classes: Vec<usize> = dets.iter().map(|d| d.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .flat_map(|c| {
            let same: Vec<Detection> = dets.iter().filter(|d| d.class_id == c).copied().collect();
            nms(&same, iou_thr)
        })
        .collect()
}
