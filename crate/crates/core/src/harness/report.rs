//! Sample distribution tables: IoU and loss of random, hard and prime
//! samples, mean score per HLR bucket, and mean score per IoU interval.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{Label, SampleBatch};
use crate::config::ExperimentConfig;
use crate::error::{ensure_len, invalid, Result};
use crate::harness::head::DetectorHead;
use crate::harness::scene::SyntheticScene;
use crate::harness::train::{forward_batch, per_sample_ce, prepare, PreparedScene};
use crate::hlr::{iou_hlr, nms_cluster, score_hlr, HlrResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Random,
    Hard,
    Prime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub category: Category,
    pub polarity: Polarity,
    pub sample: usize,
    pub image_id: usize,
    /// Post-regression IoU with the matched object for positives, largest
    /// proposal IoU with any object for negatives.
    pub iou: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub polarity: Polarity,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub score_sum: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistributionReport {
    pub scatter: Vec<ScatterRow>,
    pub hlr_buckets: Vec<BucketRow>,
    pub iou_buckets: Vec<BucketRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    /// Samples per image and category in the scatter table.
    pub per_image: usize,
    /// Width of an HLR bucket, in ranks.
    pub hlr_bucket: usize,
    /// Edges of the IoU intervals for positives, ascending.
    pub iou_edges: Vec<f64>,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            per_image: 3,
            hlr_bucket: 10,
            iou_edges: vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            seed: 0,
        }
    }
}

/// Score the report uses for sample `i`: target-class probability for a
/// positive, largest foreground probability for a negative.
fn score(batch: &SampleBatch, i: usize, polarity: Polarity) -> f64 {
    match polarity {
        Polarity::Positive => batch.target_score(i),
        Polarity::Negative => batch.max_foreground_score(i),
    }
}

fn sample_iou(batch: &SampleBatch, i: usize, polarity: Polarity) -> f64 {
    match polarity {
        Polarity::Positive => batch.regressed_iou(i),
        Polarity::Negative => batch.assignment.matches[i].max_iou,
    }
}

/// Build the tables for one batch. `pos_hlr` and `neg_hlr` must rank the
/// batch's positives and negatives; `losses` is per-sample classification
/// loss aligned with the batch.
pub fn distribution_report(
    batch: &SampleBatch,
    losses: &[f64],
    pos_hlr: &HlrResult,
    neg_hlr: &HlrResult,
    cfg: &ReportConfig,
) -> Result<DistributionReport> {
    ensure_len("losses", batch.len(), losses.len())?;
    if cfg.hlr_bucket == 0 {
        return Err(invalid("hlr_bucket", "must be positive"));
    }
    if cfg.iou_edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(invalid("iou_edges", "must be strictly ascending"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = DistributionReport::default();

    let mut images: Vec<usize> = batch.image_id.clone();
    images.sort_unstable();
    images.dedup();
    for (polarity, label, hlr) in [
        (Polarity::Positive, Label::Positive, pos_hlr),
        (Polarity::Negative, Label::Negative, neg_hlr),
    ] {
        let mut rank = vec![usize::MAX; batch.len()];
        for e in &hlr.entries {
            if e.sample >= batch.len() || batch.assignment.label(e.sample) != label {
                return Err(invalid("hlr", "entry does not match the batch polarity"));
            }
            rank[e.sample] = e.hlr;
        }
        for &img in &images {
            let members: Vec<usize> = (0..batch.len())
                .filter(|&i| batch.image_id[i] == img && batch.assignment.label(i) == label)
                .collect();
            let take = cfg.per_image.min(members.len());

            let picked = index::sample(&mut rng, members.len(), take);
            let mut random: Vec<usize> = picked.into_iter().map(|j| members[j]).collect();
            random.sort_unstable();

            let mut hard = members.clone();
            hard.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));
            hard.truncate(take);

            let mut prime: Vec<usize> = members.iter().copied().filter(|&i| rank[i] != usize::MAX).collect();
            prime.sort_by_key(|&i| (rank[i], i));
            prime.truncate(take);

            for (category, set) in [(Category::Random, random), (Category::Hard, hard), (Category::Prime, prime)] {
                for i in set {
                    report.scatter.push(ScatterRow {
                        category,
                        polarity,
                        sample: i,
                        image_id: img,
                        iou: sample_iou(batch, i, polarity),
                        loss: losses[i],
                    });
                }
            }
        }

        let max_rank = hlr.entries.iter().map(|e| e.hlr).max();
        if let Some(max_rank) = max_rank {
            let n_buckets = max_rank / cfg.hlr_bucket + 1;
            let mut sums = vec![(0usize, 0.0f64); n_buckets];
            for e in &hlr.entries {
                let b = &mut sums[e.hlr / cfg.hlr_bucket];
                b.0 += 1;
                b.1 += score(batch, e.sample, polarity);
            }
            for (k, (count, sum)) in sums.into_iter().enumerate() {
                if count > 0 {
                    report.hlr_buckets.push(bucket(
                        polarity,
                        (k * cfg.hlr_bucket) as f64,
                        ((k + 1) * cfg.hlr_bucket) as f64,
                        count,
                        sum,
                    ));
                }
            }
        }
    }

    if cfg.iou_edges.len() >= 2 {
        let last = cfg.iou_edges.len() - 2;
        let mut sums = vec![(0usize, 0.0f64); last + 1];
        for i in batch.assignment.positives() {
            let o = batch.regressed_iou(i);
            let slot = cfg.iou_edges.windows(2).enumerate().position(|(k, w)| {
                o >= w[0] && (o < w[1] || (k == last && o <= w[1]))
            });
            if let Some(k) = slot {
                sums[k].0 += 1;
                sums[k].1 += batch.target_score(i);
            }
        }
        for (k, (count, sum)) in sums.into_iter().enumerate() {
            if count > 0 {
                report.iou_buckets.push(bucket(
                    Polarity::Positive,
                    cfg.iou_edges[k],
                    cfg.iou_edges[k + 1],
                    count,
                    sum,
                ));
            }
        }
    }
    Ok(report)
}

fn bucket(polarity: Polarity, lo: f64, hi: f64, count: usize, score_sum: f64) -> BucketRow {
    BucketRow {
        polarity,
        lo,
        hi,
        count,
        score_sum,
        mean_score: score_sum / count as f64,
    }
}

impl DistributionReport {
    /// Fold `other` in: scatter rows are appended, buckets with the same
    /// polarity and bounds are pooled.
    pub fn merge(&mut self, other: DistributionReport) {
        self.scatter.extend(other.scatter);
        pool(&mut self.hlr_buckets, other.hlr_buckets);
        pool(&mut self.iou_buckets, other.iou_buckets);
    }
}

fn pool(into: &mut Vec<BucketRow>, from: Vec<BucketRow>) {
    for b in from {
        match into
            .iter_mut()
            .find(|a| a.polarity == b.polarity && a.lo == b.lo && a.hi == b.hi)
        {
            Some(a) => {
                a.count += b.count;
                a.score_sum += b.score_sum;
                a.mean_score = a.score_sum / a.count as f64;
            }
            None => into.push(b),
        }
    }
    into.sort_by(|a, b| a.polarity.cmp(&b.polarity).then(a.lo.total_cmp(&b.lo)));
}

/// Tables over every candidate of `scenes`, ranked in mini-batches of
/// `cfg.train.batch_images` scenes as during training.
pub fn scene_report(
    head: &DetectorHead,
    scenes: &[SyntheticScene],
    cfg: &ExperimentConfig,
    report_cfg: &ReportConfig,
) -> Result<DistributionReport> {
    let prepared = prepare(scenes, cfg)?;
    let mut out = DistributionReport::default();
    for (n, chunk) in prepared.chunks(cfg.train.batch_images.max(1)).enumerate() {
        let refs: Vec<&PreparedScene> = chunk.iter().collect();
        let (batch, _) = forward_batch(head, &refs, cfg.model.delta_std)?;
        let pos = iou_hlr(&batch)?;
        let neg = score_hlr(&batch, &nms_cluster(&batch, cfg.isr.cluster_iou)?)?;
        let chunk_cfg = ReportConfig {
            seed: report_cfg.seed.wrapping_add(n as u64),
            ..report_cfg.clone()
        };
        out.merge(distribution_report(&batch, &per_sample_ce(&batch), &pos, &neg, &chunk_cfg)?);
    }
    Ok(out)
}
