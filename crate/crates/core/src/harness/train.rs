//! Mini-batch SGD over the linear head with random, hard-mined, or
//! prime-reweighted samples, and inference + COCO evaluation on held-out
//! scenes.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{assign, sample_hard, sample_random, Assignment, Label, SampleBatch};
use crate::config::{ExperimentConfig, NmaxScope, Strategy};
use crate::error::{Error, Result};
use crate::eval::{batched_nms, coco_map, Detection, EvalReport, ImageRecord};
use crate::geometry::{apply_delta, BBox};
use crate::harness::head::DetectorHead;
use crate::harness::scene::{feature_dim, SyntheticScene};
use crate::hlr::{iou_hlr_per_class, nms_cluster, score_hlr, HlrResult};
use crate::isr::WeightSet;
use crate::losses::{cross_entropy, total_loss, uniform_cls_weights, LossBundle};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub cls_loss: f64,
    pub reg_loss: f64,
    pub carl_loss: f64,
    pub total: f64,
}

/// Everything a training run reports. Serializes deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub epochs: Vec<EpochStats>,
    pub eval: EvalReport,
    pub head: DetectorHead,
}

impl RunRecord {
    pub fn map(&self) -> f64 {
        self.eval.map.unwrap_or(0.0)
    }
}

/// A scene with its assignment, ready for batching.
#[derive(Debug, Clone)]
pub struct PreparedScene<'a> {
    pub scene: &'a SyntheticScene,
    pub assignment: Assignment,
}

pub fn prepare<'a>(scenes: &'a [SyntheticScene], cfg: &ExperimentConfig) -> Result<Vec<PreparedScene<'a>>> {
    scenes
        .iter()
        .map(|s| {
            Ok(PreparedScene {
                scene: s,
                assignment: assign(
                    &s.proposals,
                    &s.gts,
                    cfg.data.num_classes,
                    cfg.sampling.pos_iou,
                    cfg.sampling.neg_iou,
                )?,
            })
        })
        .collect()
}

/// All candidates of several scenes as one batch, plus their features.
pub fn forward_batch<'s>(
    head: &DetectorHead,
    scenes: &[&PreparedScene<'s>],
    delta_std: [f64; 4],
) -> Result<(SampleBatch, Vec<&'s [f64]>)> {
    let mut proposals = Vec::new();
    let mut image_id = Vec::new();
    let mut gt_boxes = Vec::new();
    let mut matches = Vec::new();
    let mut logits = Vec::new();
    let mut deltas = Vec::new();
    let mut feats: Vec<&'s [f64]> = Vec::new();
    for ps in scenes {
        let s: &'s SyntheticScene = ps.scene;
        let offset = gt_boxes.len();
        gt_boxes.extend(s.gts.iter().map(|g| g.bbox));
        for (i, p) in s.proposals.iter().enumerate() {
            let x: &'s [f64] = &s.features[i];
            proposals.push(*p);
            image_id.push(s.image_id as usize);
            let mut m = ps.assignment.matches[i];
            m.matched_gt = m.matched_gt.map(|j| j + offset);
            matches.push(m);
            logits.push(head.logits(x));
            deltas.push(head.delta(x).scaled(delta_std));
            feats.push(x);
        }
    }
    let num_classes = scenes.first().map_or(0, |s| s.assignment.num_classes);
    let batch = SampleBatch::from_logits(
        proposals,
        image_id,
        gt_boxes,
        Assignment {
            num_classes,
            matches,
        },
        &logits,
        deltas,
    )?;
    Ok((batch, feats))
}

/// Per-sample cross-entropy against the assigned target class.
pub fn per_sample_ce(batch: &SampleBatch) -> Vec<f64> {
    batch
        .class_scores
        .iter()
        .zip(&batch.assignment.matches)
        .map(|(p, m)| cross_entropy(p, m.target_class))
        .collect()
}

/// Indices kept for the loss, positives first.
pub fn select_samples<R: rand::Rng>(batch: &SampleBatch, cfg: &ExperimentConfig, rng: &mut R) -> Result<Vec<usize>> {
    let s = &cfg.sampling;
    let random = sample_random(&batch.assignment, s.batch_rois, s.pos_fraction, rng)?;
    let hard = if s.pos == Strategy::H || s.neg == Strategy::H {
        Some(sample_hard(
            &batch.assignment,
            &per_sample_ce(batch),
            s.batch_rois,
            s.pos_fraction,
        )?)
    } else {
        None
    };
    let pick = |strategy: Strategy, label: Label| -> Vec<usize> {
        let source = match (strategy, &hard) {
            (Strategy::H, Some(h)) => h,
            _ => &random,
        };
        source
            .iter()
            .copied()
            .filter(|&i| batch.assignment.label(i) == label)
            .collect()
    };
    let mut out = pick(s.pos, Label::Positive);
    out.extend(pick(s.neg, Label::Negative));
    Ok(out)
}

/// The prime-sample rankings behind the classification weights.
#[derive(Debug, Clone, Default)]
pub struct PrimeRanks {
    pub pos: Option<HlrResult>,
    pub neg: Option<HlrResult>,
}

pub fn prime_ranks(batch: &SampleBatch, cfg: &ExperimentConfig) -> Result<PrimeRanks> {
    let pos = if cfg.isr.enable_pos {
        Some(iou_hlr_per_class(batch)?)
    } else {
        None
    };
    let neg = if cfg.isr.enable_neg {
        let clusters = nms_cluster(batch, cfg.isr.cluster_iou)?;
        Some(score_hlr(batch, &clusters)?)
    } else {
        None
    };
    Ok(PrimeRanks { pos, neg })
}

/// Normalized classification weights aligned with `batch`.
pub fn isr_weights(batch: &SampleBatch, ranks: &PrimeRanks, cfg: &ExperimentConfig, ce: &[f64]) -> Result<Vec<f64>> {
    let mut weights = uniform_cls_weights(batch);
    if ranks.pos.is_none() && ranks.neg.is_none() {
        return Ok(weights);
    }
    let mut per_class = vec![0usize; batch.num_classes()];
    for i in batch.assignment.positives() {
        per_class[batch.assignment.matches[i].target_class] += 1;
    }
    let n_pos_max = per_class.into_iter().max().unwrap_or(0);
    let n_neg = batch.assignment.negatives().count();
    let (n_max_pos, n_max_neg) = match cfg.isr.nmax_scope {
        NmaxScope::Joint => {
            let m = n_pos_max.max(n_neg);
            (m, m)
        }
        NmaxScope::PerPolarity => (n_pos_max, n_neg),
    };
    for (hlr, n_max, curve) in [
        (&ranks.pos, n_max_pos, cfg.isr.pos_curve()),
        (&ranks.neg, n_max_neg, cfg.isr.neg_curve()),
    ] {
        if let Some(h) = hlr {
            let mut ws = WeightSet::from_ranks(h, n_max, curve)?;
            ws.normalize(ce)?;
            for e in &ws.entries {
                weights[e.sample] = e.w_norm;
            }
        }
    }
    Ok(weights)
}

/// Loss and gradients for an already selected batch under `cfg`.
pub fn batch_loss(batch: &SampleBatch, cfg: &ExperimentConfig) -> Result<LossBundle> {
    let ce = per_sample_ce(batch);
    let ranks = prime_ranks(batch, cfg)?;
    let weights = isr_weights(batch, &ranks, cfg, &ce)?;
    total_loss(batch, &weights, &cfg.loss_config())
}

/// Parameter gradient of `bundle` for the samples' features.
pub fn head_gradient(head: &DetectorHead, feats: &[&[f64]], bundle: &LossBundle, delta_std: [f64; 4]) -> DetectorHead {
    let mut grad = DetectorHead::zeros(head.num_features, head.num_classes);
    for ((x, gl), gd) in feats.iter().zip(&bundle.grad_scores).zip(&bundle.grad_deltas) {
        head.backward(x, gl, &gd.scaled(delta_std), &mut grad);
    }
    grad
}

/// Train a fresh head on `train` and evaluate it on `eval`.
pub fn train(train: &[SyntheticScene], eval: &[SyntheticScene], cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let prepared = prepare(train, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = DetectorHead::init(
        feature_dim(cfg.data.num_classes),
        cfg.data.num_classes,
        cfg.model.init_scale,
        seed ^ 0x5eed_4ead,
    );
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.train.epochs);
    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        let mut acc = [0.0f64; 4];
        let mut iters = 0usize;
        for (iteration, chunk) in order.chunks(cfg.train.batch_images).enumerate() {
            let scenes: Vec<&PreparedScene> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (full, feats) = forward_batch(&head, &scenes, cfg.model.delta_std)?;
            if per_sample_ce(&full).iter().any(|l| !l.is_finite()) {
                return Err(diverged(epoch, iteration, Error::NonFinite("classification loss")));
            }
            let keep = select_samples(&full, cfg, &mut rng)?;
            if keep.is_empty() {
                continue;
            }
            let batch = full.subset(&keep);
            let sub_feats: Vec<&[f64]> = keep.iter().map(|&i| feats[i]).collect();
            let bundle = batch_loss(&batch, cfg).map_err(|e| diverged(epoch, iteration, e))?;
            let mut grad = head_gradient(&head, &sub_feats, &bundle, cfg.model.delta_std);
            let norm = grad.norm();
            if !norm.is_finite() {
                return Err(diverged(epoch, iteration, Error::NonFinite("gradient")));
            }
            if norm > cfg.train.grad_clip {
                grad.scale(cfg.train.grad_clip / norm);
            }
            head.step(&grad, cfg.train.lr);
            if !head.is_finite() {
                return Err(diverged(epoch, iteration, Error::NonFinite("parameters")));
            }
            acc[0] += bundle.cls_loss;
            acc[1] += bundle.reg_loss;
            acc[2] += bundle.carl_loss;
            acc[3] += bundle.total;
            iters += 1;
        }
        let d = iters.max(1) as f64;
        epochs.push(EpochStats {
            epoch,
            cls_loss: acc[0] / d,
            reg_loss: acc[1] / d,
            carl_loss: acc[2] / d,
            total: acc[3] / d,
        });
    }
    let eval = evaluate(&head, eval, cfg)?;
    Ok(RunRecord {
        label: run_label(cfg),
        seed,
        config: cfg.clone(),
        epochs,
        eval,
        head,
    })
}

fn diverged(epoch: usize, iteration: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(_) | Error::Degenerate(_) => Error::Diverged {
            epoch,
            iteration,
            detail: alloc::format!("{e}"),
        },
        other => other,
    }
}

/// Short tag such as `P/P`, `R/H`, or `R/R+isr_p+carl`.
pub fn run_label(cfg: &ExperimentConfig) -> String {
    let mut s = alloc::format!("{}/{}", cfg.sampling.pos.letter(), cfg.sampling.neg.letter());
    let full = cfg.sampling.pos == Strategy::P
        && cfg.sampling.neg == Strategy::P
        && cfg.isr.enable_pos
        && cfg.isr.enable_neg
        && cfg.carl.enable;
    let any = cfg.isr.enable_pos || cfg.isr.enable_neg || cfg.carl.enable;
    if any && !full {
        for (on, tag) in [
            (cfg.isr.enable_pos, "+isr_p"),
            (cfg.isr.enable_neg, "+isr_n"),
            (cfg.carl.enable, "+carl"),
        ] {
            if on {
                s.push_str(tag);
            }
        }
    }
    s
}

/// Raw per-proposal outputs for one scene.
#[derive(Debug, Clone)]
pub struct ScenePrediction {
    pub probs: Vec<Vec<f64>>,
    pub boxes: Vec<BBox>,
}

pub fn predict_scene(head: &DetectorHead, scene: &SyntheticScene, delta_std: [f64; 4]) -> Result<ScenePrediction> {
    let mut probs = Vec::with_capacity(scene.proposals.len());
    let mut boxes = Vec::with_capacity(scene.proposals.len());
    for (p, x) in scene.proposals.iter().zip(&scene.features) {
        probs.push(crate::losses::softmax(&head.logits(x)));
        boxes.push(apply_delta(p, &head.delta(x).scaled(delta_std))?.clip(scene.extent, scene.extent));
    }
    Ok(ScenePrediction { probs, boxes })
}

/// Per-class NMS over every (proposal, foreground class) pair.
pub fn detections_from(pred: &ScenePrediction, num_classes: usize, cfg: &ExperimentConfig) -> Vec<Detection> {
    let mut dets = Vec::new();
    for (p, b) in pred.probs.iter().zip(&pred.boxes) {
        if b.area() <= 0.0 {
            continue;
        }
        for (c, &score) in p.iter().take(num_classes).enumerate() {
            if score >= cfg.eval.score_floor {
                dets.push(Detection {
                    bbox: *b,
                    class_id: c,
                    score,
                });
            }
        }
    }
    let mut kept = batched_nms(&dets, cfg.eval.nms_iou);
    kept.sort_by(|a, b| b.score.total_cmp(&a.score));
    kept.truncate(cfg.eval.max_dets_per_image);
    kept
}

pub fn image_record(scene: &SyntheticScene, dets: Vec<Detection>) -> ImageRecord {
    ImageRecord {
        image_id: scene.image_id,
        gts: scene.gts.clone(),
        dets,
    }
}

/// Inference on every scene followed by COCO-style mAP.
pub fn evaluate(head: &DetectorHead, scenes: &[SyntheticScene], cfg: &ExperimentConfig) -> Result<EvalReport> {
    let records = scenes
        .iter()
        .map(|s| {
            let pred = predict_scene(head, s, cfg.model.delta_std)?;
            Ok(image_record(s, detections_from(&pred, cfg.data.num_classes, cfg)))
        })
        .collect::<Result<Vec<_>>>()?;
    coco_map(&records, &cfg.eval.thresholds)
}

/// Mean of each field over several records, one entry per threshold.
pub fn mean_ap_by_threshold(records: &[RunRecord]) -> Vec<f64> {
    let n = records.first().map_or(0, |r| r.eval.thresholds.len());
    let mut out = vec![0.0; n];
    for r in records {
        for (o, ap) in out.iter_mut().zip(&r.eval.ap_by_threshold) {
            *o += ap.unwrap_or(0.0);
        }
    }
    let d = records.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= d);
    out
}
