//! Max-IoU assignment of proposals to ground truths, the per-batch sample
//! container, and the random / hard-mining sampling baselines.

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Error, Result};
use crate::geometry::{apply_delta, encode_delta, iou, BBox, Delta};
use crate::losses::softmax;

pub const DEFAULT_POS_IOU: f64 = 0.5;
pub const DEFAULT_NEG_IOU: f64 = 0.5;
pub const DEFAULT_BATCH_ROIS: usize = 512;
/// One positive for every three negatives.
pub const DEFAULT_POS_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "box")]
    pub bbox: BBox,
    #[serde(rename = "class")]
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalMatch {
    /// Arg-max IoU ground truth; `None` when nothing overlaps.
    pub matched_gt: Option<usize>,
    pub max_iou: f64,
    pub label: Label,
    /// Foreground class for positives; `num_classes` (background) otherwise.
    pub target_class: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Assignment {
    pub num_classes: usize,
    pub matches: Vec<ProposalMatch>,
}

impl Assignment {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn label(&self, i: usize) -> Label {
        self.matches[i].label
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices_with(Label::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices_with(Label::Negative)
    }

    fn indices_with(&self, label: Label) -> impl Iterator<Item = usize> + '_ {
        self.matches
            .iter()
            .enumerate()
            .filter(move |(_, m)| m.label == label)
            .map(|(i, _)| i)
    }

    pub fn subset(&self, indices: &[usize]) -> Assignment {
        Assignment {
            num_classes: self.num_classes,
            matches: indices.iter().map(|&i| self.matches[i]).collect(),
        }
    }
}

/// Match every proposal to its highest-IoU ground truth (lowest index on ties)
/// and label it by the two thresholds.
pub fn assign(
    proposals: &[BBox],
    gts: &[GroundTruth],
    num_classes: usize,
    pos_thr: f64,
    neg_thr: f64,
) -> Result<Assignment> {
    if !(pos_thr > 0.0 && pos_thr <= 1.0) {
        return Err(invalid("pos_thr", "must lie in (0, 1]"));
    }
    if !(neg_thr > 0.0 && neg_thr <= pos_thr) {
        return Err(invalid("neg_thr", "must lie in (0, pos_thr]"));
    }
    if let Some(g) = gts.iter().find(|g| g.class_id >= num_classes) {
        return Err(invalid(
            "class_id",
            alloc::format!("{} out of range for {} classes", g.class_id, num_classes),
        ));
    }
    let matches = proposals
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts.iter().enumerate() {
                let o = iou(p, &g.bbox);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            let (matched_gt, max_iou) = match best {
                Some((j, o)) if o > 0.0 => (Some(j), o),
                _ => (None, 0.0),
            };
            let label = if max_iou >= pos_thr {
                Label::Positive
            } else if max_iou < neg_thr {
                Label::Negative
            } else {
                Label::Ignored
            };
            let target_class = match (label, matched_gt) {
                (Label::Positive, Some(j)) => gts[j].class_id,
                _ => num_classes,
            };
            ProposalMatch {
                matched_gt,
                max_iou,
                label,
                target_class,
            }
        })
        .collect();
    Ok(Assignment {
        num_classes,
        matches,
    })
}

/// Everything the ranking and loss code needs about one mini-batch of samples.
///
/// Ground-truth indices in the assignment refer to `gt_boxes`; samples from
/// different images share one batch and are told apart by `image_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub proposals: Vec<BBox>,
    pub image_id: Vec<usize>,
    pub gt_boxes: Vec<BBox>,
    pub assignment: Assignment,
    /// Length `num_classes + 1` probability vectors, background last.
    pub class_scores: Vec<Vec<f64>>,
    pub reg_delta: Vec<Delta>,
    pub regressed_box: Vec<BBox>,
    /// Encoded target for positives; `None` elsewhere.
    pub reg_target: Vec<Option<Delta>>,
}

impl SampleBatch {
    /// Build a batch from raw head outputs (logits and offsets).
    pub fn from_logits(
        proposals: Vec<BBox>,
        image_id: Vec<usize>,
        gt_boxes: Vec<BBox>,
        assignment: Assignment,
        logits: &[Vec<f64>],
        reg_delta: Vec<Delta>,
    ) -> Result<Self> {
        let class_scores = logits.iter().map(|l| softmax(l)).collect();
        Self::from_scores(
            proposals,
            image_id,
            gt_boxes,
            assignment,
            class_scores,
            reg_delta,
        )
    }

    pub fn from_scores(
        proposals: Vec<BBox>,
        image_id: Vec<usize>,
        gt_boxes: Vec<BBox>,
        assignment: Assignment,
        class_scores: Vec<Vec<f64>>,
        reg_delta: Vec<Delta>,
    ) -> Result<Self> {
        let n = proposals.len();
        ensure_len("image ids", n, image_id.len())?;
        ensure_len("assignment", n, assignment.len())?;
        ensure_len("class scores", n, class_scores.len())?;
        ensure_len("regression outputs", n, reg_delta.len())?;
        let width = assignment.num_classes + 1;
        for s in &class_scores {
            ensure_len("score vector", s.len(), width)?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("class scores"));
            }
            let total: f64 = s.iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return Err(invalid("class_scores", "score vector does not sum to 1"));
            }
        }
        let regressed_box = proposals
            .iter()
            .zip(&reg_delta)
            .map(|(p, d)| apply_delta(p, d))
            .collect::<Result<Vec<_>>>()?;
        let reg_target = proposals
            .iter()
            .zip(&assignment.matches)
            .map(|(p, m)| match (m.label, m.matched_gt) {
                (Label::Positive, Some(j)) => gt_boxes
                    .get(j)
                    .ok_or_else(|| invalid("matched_gt", "index outside gt_boxes"))
                    .and_then(|g| encode_delta(p, g))
                    .map(Some),
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleBatch {
            proposals,
            image_id,
            gt_boxes,
            assignment,
            class_scores,
            reg_delta,
            regressed_box,
            reg_target,
        })
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.assignment.num_classes
    }

    /// IoU of the regressed box with the matched ground truth.
    pub fn regressed_iou(&self, i: usize) -> f64 {
        match self.assignment.matches[i].matched_gt {
            Some(j) => iou(&self.regressed_box[i], &self.gt_boxes[j]),
            None => 0.0,
        }
    }

    /// Highest foreground probability of sample `i`.
    pub fn max_foreground_score(&self, i: usize) -> f64 {
        let s = &self.class_scores[i];
        s[..s.len() - 1].iter().copied().fold(0.0, f64::max)
    }

    /// Probability assigned to the sample's target class (background for negatives).
    pub fn target_score(&self, i: usize) -> f64 {
        self.class_scores[i][self.assignment.matches[i].target_class]
    }

    /// Restrict the batch to `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> SampleBatch {
        SampleBatch {
            proposals: indices.iter().map(|&i| self.proposals[i]).collect(),
            image_id: indices.iter().map(|&i| self.image_id[i]).collect(),
            gt_boxes: self.gt_boxes.clone(),
            assignment: self.assignment.subset(indices),
            class_scores: indices.iter().map(|&i| self.class_scores[i].clone()).collect(),
            reg_delta: indices.iter().map(|&i| self.reg_delta[i]).collect(),
            regressed_box: indices.iter().map(|&i| self.regressed_box[i]).collect(),
            reg_target: indices.iter().map(|&i| self.reg_target[i]).collect(),
        }
    }
}

/// Positive and negative counts for a sampling request.
fn quotas(n_pos_avail: usize, n_neg_avail: usize, n_total: usize, pos_fraction: f64) -> (usize, usize) {
    let pos_cap = libm::floor(pos_fraction * n_total as f64) as usize;
    let n_pos = pos_cap.min(n_pos_avail);
    let n_neg = (n_total - n_pos).min(n_neg_avail);
    (n_pos, n_neg)
}

fn check_request(n_total: usize, pos_fraction: f64) -> Result<()> {
    if n_total == 0 {
        return Err(invalid("n_total", "must be positive"));
    }
    if !(0.0..=1.0).contains(&pos_fraction) {
        return Err(invalid("pos_fraction", "must lie in [0, 1]"));
    }
    Ok(())
}

/// Uniform sampling without replacement under a positive quota.
///
/// Returns positive indices then negative indices, each ascending.
pub fn sample_random<R: Rng + ?Sized>(
    assignment: &Assignment,
    n_total: usize,
    pos_fraction: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_request(n_total, pos_fraction)?;
    let pos: Vec<usize> = assignment.positives().collect();
    let neg: Vec<usize> = assignment.negatives().collect();
    let (n_pos, n_neg) = quotas(pos.len(), neg.len(), n_total, pos_fraction);
    let mut out = pick(&pos, n_pos, rng);
    out.extend(pick(&neg, n_neg, rng));
    Ok(out)
}

/// [`sample_random`] with a generator seeded from `seed`.
pub fn sample_random_seeded(
    assignment: &Assignment,
    n_total: usize,
    pos_fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    sample_random(
        assignment,
        n_total,
        pos_fraction,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

fn pick<R: Rng + ?Sized>(pool: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    let mut chosen: Vec<usize> = index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    chosen.sort_unstable();
    chosen
}

/// Top-loss positives and negatives under the same quota as [`sample_random`].
/// Equal losses resolve toward the lower index.
pub fn sample_hard(
    assignment: &Assignment,
    per_sample_cls_loss: &[f64],
    n_total: usize,
    pos_fraction: f64,
) -> Result<Vec<usize>> {
    check_request(n_total, pos_fraction)?;
    ensure_len("per-sample losses", assignment.len(), per_sample_cls_loss.len())?;
    if per_sample_cls_loss.iter().any(|l| l.is_nan()) {
        return Err(Error::NonFinite("per-sample losses"));
    }
    let pos: Vec<usize> = assignment.positives().collect();
    let neg: Vec<usize> = assignment.negatives().collect();
    let (n_pos, n_neg) = quotas(pos.len(), neg.len(), n_total, pos_fraction);
    let top = |mut pool: Vec<usize>, k: usize| {
        pool.sort_by(|&a, &b| {
            per_sample_cls_loss[b]
                .total_cmp(&per_sample_cls_loss[a])
                .then(a.cmp(&b))
        });
        pool.truncate(k);
        pool.sort_unstable();
        pool
    };
    let mut out = top(pos, n_pos);
    out.extend(top(neg, n_neg));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(x1: f64, y1: f64, x2: f64, y2: f64, c: usize) -> GroundTruth {
        GroundTruth {
            bbox: BBox::new(x1, y1, x2, y2),
            class_id: c,
        }
    }

    fn labels(ls: &[Label]) -> Assignment {
        Assignment {
            num_classes: 1,
            matches: ls
                .iter()
                .map(|&label| ProposalMatch {
                    matched_gt: None,
                    max_iou: 0.0,
                    label,
                    target_class: if label == Label::Positive { 0 } else { 1 },
                })
                .collect(),
        }
    }

    #[test]
    fn identical_and_disjoint() {
        let gts = [gt(0.0, 0.0, 10.0, 10.0, 1)];
        let props = [BBox::new(0.0, 0.0, 10.0, 10.0), BBox::new(50.0, 50.0, 60.0, 60.0)];
        let a = assign(&props, &gts, 2, 0.5, 0.5).unwrap();
        assert_eq!(a.matches[0].label, Label::Positive);
        assert_eq!(a.matches[0].max_iou, 1.0);
        assert_eq!(a.matches[0].target_class, 1);
        assert_eq!(a.matches[1].label, Label::Negative);
        assert_eq!(a.matches[1].max_iou, 0.0);
        assert_eq!(a.matches[1].target_class, 2);
    }

    #[test]
    fn picks_higher_overlap_gt() {
        let gts = [gt(0.0, 0.0, 10.0, 10.0, 0), gt(4.0, 0.0, 14.0, 10.0, 1)];
        let p = [BBox::new(5.0, 0.0, 14.0, 10.0)];
        let a = assign(&p, &gts, 2, 0.5, 0.5).unwrap();
        assert_eq!(a.matches[0].matched_gt, Some(1));
        assert_eq!(a.matches[0].target_class, 1);
    }

    #[test]
    fn empty_gts_all_negative() {
        let p = [BBox::new(0.0, 0.0, 1.0, 1.0); 3];
        let a = assign(&p, &[], 3, 0.5, 0.5).unwrap();
        assert!(a.matches.iter().all(|m| m.label == Label::Negative && m.matched_gt.is_none()));
    }

    #[test]
    fn ignored_band() {
        let gts = [gt(0.0, 0.0, 10.0, 10.0, 0)];
        // IoU 0.4
        let p = [BBox::new(0.0, 0.0, 10.0, 4.0)];
        let a = assign(&p, &gts, 1, 0.5, 0.3).unwrap();
        assert_eq!(a.matches[0].label, Label::Ignored);
        assert!(assign(&p, &gts, 1, 0.3, 0.5).is_err());
        assert!(assign(&p, &gts, 1, 0.0, 0.0).is_err());
    }

    #[test]
    fn random_cardinality_and_determinism() {
        let a = labels(&[Label::Positive; 10]);
        let s = sample_random_seeded(&a, 16, 0.25, 3).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s, sample_random_seeded(&a, 16, 0.25, 3).unwrap());
    }

    #[test]
    fn random_takes_everything_when_short() {
        let mut ls = alloc::vec![Label::Positive; 2];
        ls.extend([Label::Negative; 3]);
        let s = sample_random_seeded(&labels(&ls), 512, 0.25, 0).unwrap();
        assert_eq!(s, [0, 1, 2, 3, 4]);
    }

    #[test]
    fn paper_quota() {
        let mut ls = alloc::vec![Label::Positive; 300];
        ls.extend(alloc::vec![Label::Negative; 2000]);
        let a = labels(&ls);
        let s = sample_random_seeded(&a, 512, 0.25, 11).unwrap();
        let npos = s.iter().filter(|&&i| a.label(i) == Label::Positive).count();
        assert_eq!(npos, 128);
        assert_eq!(s.len(), 512);
    }

    #[test]
    fn hard_top_k_and_ties() {
        let a = labels(&[Label::Negative; 3]);
        assert_eq!(sample_hard(&a, &[3.0, 1.0, 2.0], 2, 0.0).unwrap(), [0, 2]);
        assert_eq!(sample_hard(&a, &[1.0, 1.0, 1.0], 2, 0.0).unwrap(), [0, 1]);
        assert!(sample_hard(&a, &[1.0], 2, 0.0).is_err());
        assert!(sample_hard(&a, &[1.0; 3], 0, 0.0).is_err());
    }
}
