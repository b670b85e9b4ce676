//! Hierarchical local ranking.
//!
//! Samples are first ranked inside their group (ground-truth object for
//! positives, NMS cluster for negatives). The global order then takes every
//! local-rank-0 sample sorted by key, followed by every local-rank-1 sample,
//! and so on. Ties always resolve toward the lower sample index.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assignment::{Label, SampleBatch};
use crate::error::{invalid, Result};
use crate::geometry::iou;

pub const DEFAULT_CLUSTER_IOU: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HlrEntry {
    /// Index into the batch.
    pub sample: usize,
    pub class_id: usize,
    pub group_id: usize,
    pub local_rank: usize,
    pub hlr: usize,
    /// Post-regression IoU for positives, max foreground score for negatives.
    pub key: f64,
}

/// Ranks for one polarity, listed in ascending sample order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HlrResult {
    pub entries: Vec<HlrEntry>,
}

impl HlrResult {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sample indices from most to least important; per-class rankings interleave by rank.
    pub fn order(&self) -> Vec<usize> {
        let mut by_rank: Vec<&HlrEntry> = self.entries.iter().collect();
        by_rank.sort_by_key(|e| (e.hlr, e.class_id));
        by_rank.into_iter().map(|e| e.sample).collect()
    }

    pub fn num_groups(&self) -> usize {
        let mut g: Vec<usize> = self.entries.iter().map(|e| e.group_id).collect();
        g.sort_unstable();
        g.dedup();
        g.len()
    }
}

/// Local rank and hierarchical rank for `keys` partitioned by `groups`.
///
/// Returns `(local_rank, hlr)` per position; `hlr` is a permutation of `0..n`.
pub fn hierarchical_rank(keys: &[f64], groups: &[usize]) -> Vec<(usize, usize)> {
    debug_assert_eq!(keys.len(), groups.len());
    let n = keys.len();
    let desc = |a: usize, b: usize| keys[b].total_cmp(&keys[a]).then(a.cmp(&b));

    let mut by_group: Vec<usize> = (0..n).collect();
    by_group.sort_by(|&a, &b| groups[a].cmp(&groups[b]).then_with(|| desc(a, b)));
    let mut local = vec![0usize; n];
    for (pos, &i) in by_group.iter().enumerate() {
        if pos > 0 && groups[by_group[pos - 1]] == groups[i] {
            local[i] = local[by_group[pos - 1]] + 1;
        }
    }

    let mut global: Vec<usize> = (0..n).collect();
    global.sort_by(|&a, &b| local[a].cmp(&local[b]).then_with(|| desc(a, b)));
    let mut out = vec![(0, 0); n];
    for (rank, &i) in global.iter().enumerate() {
        out[i] = (local[i], rank);
    }
    out
}

fn rank_entries(
    samples: &[usize],
    classes: &[usize],
    groups: &[usize],
    keys: &[f64],
    per_class: bool,
) -> HlrResult {
    let mut entries: Vec<HlrEntry> = samples
        .iter()
        .enumerate()
        .map(|(k, &sample)| HlrEntry {
            sample,
            class_id: classes[k],
            group_id: groups[k],
            local_rank: 0,
            hlr: 0,
            key: keys[k],
        })
        .collect();
    let scopes: Vec<usize> = if per_class {
        classes.to_vec()
    } else {
        vec![0; samples.len()]
    };
    let mut distinct = scopes.clone();
    distinct.sort_unstable();
    distinct.dedup();
    for scope in distinct {
        let members: Vec<usize> = (0..samples.len()).filter(|&k| scopes[k] == scope).collect();
        let sub_keys: Vec<f64> = members.iter().map(|&k| keys[k]).collect();
        let sub_groups: Vec<usize> = members.iter().map(|&k| groups[k]).collect();
        for (&k, (lr, h)) in members.iter().zip(hierarchical_rank(&sub_keys, &sub_groups)) {
            entries[k].local_rank = lr;
            entries[k].hlr = h;
        }
    }
    HlrResult { entries }
}

fn positive_inputs(batch: &SampleBatch) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>, Vec<f64>)> {
    let samples: Vec<usize> = batch.assignment.positives().collect();
    let mut classes = Vec::with_capacity(samples.len());
    let mut groups = Vec::with_capacity(samples.len());
    let mut keys = Vec::with_capacity(samples.len());
    for &i in &samples {
        let m = &batch.assignment.matches[i];
        let g = m
            .matched_gt
            .ok_or_else(|| invalid("assignment", "positive sample without a matched ground truth"))?;
        if g >= batch.gt_boxes.len() {
            return Err(invalid("matched_gt", "index outside gt_boxes"));
        }
        classes.push(m.target_class);
        groups.push(g);
        keys.push(iou(&batch.regressed_box[i], &batch.gt_boxes[g]));
    }
    Ok((samples, classes, groups, keys))
}

/// IoU-HLR over every positive in the batch, grouped by matched ground truth
/// and keyed by the IoU of the regressed box.
pub fn iou_hlr(batch: &SampleBatch) -> Result<HlrResult> {
    let (s, c, g, k) = positive_inputs(batch)?;
    Ok(rank_entries(&s, &c, &g, &k, false))
}

/// IoU-HLR computed independently inside each foreground class; `hlr` is a
/// permutation of `0..n_j` for class `j`. This is the form reweighting uses.
pub fn iou_hlr_per_class(batch: &SampleBatch) -> Result<HlrResult> {
    let (s, c, g, k) = positive_inputs(batch)?;
    Ok(rank_entries(&s, &c, &g, &k, true))
}

/// Greedy-NMS grouping of the negatives.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NegClustering {
    /// Batch indices of the negatives, ascending.
    pub samples: Vec<usize>,
    /// Cluster of each entry in `samples`.
    pub cluster_id: Vec<usize>,
    /// Batch index of the kept box seeding each cluster.
    pub representatives: Vec<usize>,
}

impl NegClustering {
    pub fn num_clusters(&self) -> usize {
        self.representatives.len()
    }
}

/// Cluster negatives with greedy NMS on the max foreground score.
///
/// Suppression requires IoU strictly above `iou_thr` and the same image.
pub fn nms_cluster(batch: &SampleBatch, iou_thr: f64) -> Result<NegClustering> {
    if !(0.0..=1.0).contains(&iou_thr) {
        return Err(invalid("iou_thr", "must lie in [0, 1]"));
    }
    let samples: Vec<usize> = batch.assignment.negatives().collect();
    let scores: Vec<f64> = samples.iter().map(|&i| batch.max_foreground_score(i)).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut cluster_id = vec![usize::MAX; samples.len()];
    let mut representatives = Vec::new();
    for (pos, &a) in order.iter().enumerate() {
        if cluster_id[a] != usize::MAX {
            continue;
        }
        let c = representatives.len();
        representatives.push(samples[a]);
        cluster_id[a] = c;
        let (ia, box_a) = (batch.image_id[samples[a]], batch.regressed_box[samples[a]]);
        for &b in &order[pos + 1..] {
            if cluster_id[b] == usize::MAX
                && batch.image_id[samples[b]] == ia
                && iou(&box_a, &batch.regressed_box[samples[b]]) > iou_thr
            {
                cluster_id[b] = c;
            }
        }
    }
    Ok(NegClustering {
        samples,
        cluster_id,
        representatives,
    })
}

/// Score-HLR: the same two-step ranking with clusters as groups and the
/// max foreground score as key. All negatives share the background class.
pub fn score_hlr(batch: &SampleBatch, clustering: &NegClustering) -> Result<HlrResult> {
    let n = clustering.samples.len();
    if clustering.cluster_id.len() != n {
        return Err(invalid("clustering", "cluster ids misaligned with samples"));
    }
    if let Some(&i) = clustering
        .samples
        .iter()
        .find(|&&i| i >= batch.len() || batch.assignment.label(i) != Label::Negative)
    {
        return Err(invalid(
            "clustering",
            alloc::format!("sample {i} is not a negative of this batch"),
        ));
    }
    let keys: Vec<f64> = clustering
        .samples
        .iter()
        .map(|&i| batch.max_foreground_score(i))
        .collect();
    let classes = vec![batch.num_classes(); n];
    Ok(rank_entries(
        &clustering.samples,
        &classes,
        &clustering.cluster_id,
        &keys,
        false,
    ))
}
