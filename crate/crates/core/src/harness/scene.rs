//! Synthetic scenes: random objects, unannotated look-alikes, jittered
//! proposals around both, uniform background proposals, and per-proposal
//! features a linear head can learn from.
//!
//! Feature layout (length `num_classes + 7`):
//! `[class evidence x C | offset cues x 4 | overlap cue | reliability cue | 1]`.
//! Class evidence is a noisy one-hot of the nearest object's class scaled by
//! the proposal's IoU with it (and by `distractor_strength` when that object
//! is a look-alike); offset cues are the true regression target
//! plus noise; the overlap cue is that IoU plus noise. Each proposal draws a
//! reliability `r` in `[0, 1]` that sets how noisy its offset cues are, so
//! the quality of the regressed box is partly observable through the
//! reliability cue.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assignment::GroundTruth;
use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::geometry::{encode_delta, iou, BBox, Delta};

/// Minimum side length of any generated box.
const MIN_SIDE: f64 = 2.0;
/// Every object gets at least one proposal at or above this overlap.
pub const COVERAGE_IOU: f64 = 0.7;

/// Which split a scene belongs to; selects an independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    fn stream_base(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Eval => 1 << 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub image_id: u64,
    pub extent: f64,
    pub gts: Vec<GroundTruth>,
    /// Look-alikes that carry class evidence but are not annotated.
    pub distractors: Vec<GroundTruth>,
    pub proposals: Vec<BBox>,
    pub features: Vec<Vec<f64>>,
}

pub fn feature_dim(num_classes: usize) -> usize {
    num_classes + 7
}

/// Deterministic scenes for `split`; scene `i` depends only on `(cfg, seed, split, i)`.
pub fn gen_scenes(cfg: &DataConfig, count: usize, seed: u64, split: Split) -> Result<Vec<SyntheticScene>> {
    check(cfg)?;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(split.stream_base() + i as u64);
            gen_scene(cfg, i as u64, &mut rng)
        })
        .collect()
}

fn check(cfg: &DataConfig) -> Result<()> {
    if cfg.num_classes == 0 || cfg.min_objects == 0 || cfg.min_objects > cfg.max_objects {
        return Err(Error::Config("scene generator needs classes and 1 <= min_objects <= max_objects".into()));
    }
    if !(cfg.min_object_size >= MIN_SIDE && cfg.min_object_size <= cfg.max_object_size) {
        return Err(Error::Config("object sizes must satisfy 2 <= min <= max".into()));
    }
    if cfg.max_object_size >= cfg.image_size {
        return Err(Error::Config(alloc::format!(
            "objects up to {} cannot fit an image of {}",
            cfg.max_object_size, cfg.image_size
        )));
    }
    if cfg.offset_noise_min > cfg.offset_noise_max {
        return Err(Error::Config("offset_noise_min must not exceed offset_noise_max".into()));
    }
    if cfg.proposals_per_object == 0 {
        return Err(Error::Config("proposals_per_object must be at least 1".into()));
    }
    if cfg.jitter_scales.is_empty() {
        return Err(Error::Config("jitter_scales must not be empty".into()));
    }
    Ok(())
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Order the corners, enforce the minimum side and keep the box inside the image.
fn tidy(x1: f64, y1: f64, x2: f64, y2: f64, extent: f64) -> BBox {
    let (mut a, mut b) = (x1.min(x2), x1.max(x2));
    let (mut c, mut d) = (y1.min(y2), y1.max(y2));
    a = a.clamp(0.0, extent - MIN_SIDE);
    c = c.clamp(0.0, extent - MIN_SIDE);
    b = b.clamp(a + MIN_SIDE, extent);
    d = d.clamp(c + MIN_SIDE, extent);
    BBox::new(a, c, b, d)
}

fn jitter<R: Rng>(gt: &BBox, scale: f64, extent: f64, rng: &mut R) -> BBox {
    let (w, h) = (gt.width(), gt.height());
    tidy(
        gt.x1 + scale * w * normal(rng),
        gt.y1 + scale * h * normal(rng),
        gt.x2 + scale * w * normal(rng),
        gt.y2 + scale * h * normal(rng),
        extent,
    )
}

fn random_object<R: Rng>(cfg: &DataConfig, rng: &mut R) -> GroundTruth {
    let extent = cfg.image_size;
    let w = rng.random_range(cfg.min_object_size..=cfg.max_object_size);
    let h = rng.random_range(cfg.min_object_size..=cfg.max_object_size);
    let x = rng.random_range(0.0..=extent - w);
    let y = rng.random_range(0.0..=extent - h);
    GroundTruth {
        bbox: BBox::new(x, y, x + w, y + h),
        class_id: rng.random_range(0..cfg.num_classes),
    }
}

fn gen_scene<R: Rng>(cfg: &DataConfig, image_id: u64, rng: &mut R) -> Result<SyntheticScene> {
    let extent = cfg.image_size;
    let n_obj = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let gts: Vec<GroundTruth> = (0..n_obj).map(|_| random_object(cfg, rng)).collect();
    let n_distractors = rng.random_range(0..=cfg.max_distractors);
    let distractors: Vec<GroundTruth> = (0..n_distractors).map(|_| random_object(cfg, rng)).collect();

    let mut proposals =
        Vec::with_capacity((n_obj + n_distractors) * cfg.proposals_per_object + cfg.background_proposals);
    for g in gts.iter().chain(&distractors) {
        let start = proposals.len();
        for j in 0..cfg.proposals_per_object {
            let scale = cfg.jitter_scales[j % cfg.jitter_scales.len()];
            proposals.push(jitter(&g.bbox, scale, extent, rng));
        }
        let covered = proposals[start..]
            .iter()
            .any(|p| iou(p, &g.bbox) >= COVERAGE_IOU);
        if !covered {
            proposals[start] = g.bbox;
        }
    }
    for _ in 0..cfg.background_proposals {
        let w = rng.random_range(0.5 * cfg.min_object_size..=1.2 * cfg.max_object_size).min(extent);
        let h = rng.random_range(0.5 * cfg.min_object_size..=1.2 * cfg.max_object_size).min(extent);
        let x = rng.random_range(0.0..=extent - w);
        let y = rng.random_range(0.0..=extent - h);
        proposals.push(tidy(x, y, x + w, y + h, extent));
    }

    let features = proposals
        .iter()
        .map(|p| features_for(p, &gts, &distractors, cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticScene {
        image_id,
        extent,
        gts,
        distractors,
        proposals,
        features,
    })
}

fn features_for<R: Rng>(
    p: &BBox,
    gts: &[GroundTruth],
    distractors: &[GroundTruth],
    cfg: &DataConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let nearest = gts
        .iter()
        .map(|g| (g, 1.0))
        .chain(distractors.iter().map(|g| (g, cfg.distractor_strength)))
        .map(|(g, strength)| (g, strength, iou(p, &g.bbox)))
        .fold(None, |best: Option<(&GroundTruth, f64, f64)>, (g, s, o)| match best {
            Some((_, _, b)) if b >= o => best,
            _ if o > 0.0 => Some((g, s, o)),
            _ => best,
        });
    let (class, evidence, quality, target) = match nearest {
        Some((g, s, o)) => (Some(g.class_id), s * o, o, encode_delta(p, &g.bbox)?),
        None => (None, 0.0, 0.0, Delta::ZERO),
    };
    let mut f = Vec::with_capacity(feature_dim(cfg.num_classes));
    for k in 0..cfg.num_classes {
        let signal = if class == Some(k) { evidence } else { 0.0 };
        f.push(signal + cfg.class_noise * normal(rng));
    }
    let reliability: f64 = rng.random_range(0.0..1.0);
    let sigma = cfg.offset_noise_min + (cfg.offset_noise_max - cfg.offset_noise_min) * (1.0 - reliability);
    for t in target.to_array() {
        f.push(t + sigma * normal(rng));
    }
    f.push(quality + cfg.quality_noise * normal(rng));
    f.push(reliability * quality + cfg.reliability_noise * normal(rng));
    f.push(1.0);
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = DataConfig::default();
        let a = gen_scenes(&cfg, 3, 9, Split::Train).unwrap();
        let b = gen_scenes(&cfg, 3, 9, Split::Train).unwrap();
        assert_eq!(a, b);
        let c = gen_scenes(&cfg, 3, 9, Split::Eval).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_jitter_reproduces_objects() {
        let cfg = DataConfig {
            jitter_scales: alloc::vec![0.0],
            background_proposals: 0,
            max_distractors: 0,
            ..DataConfig::default()
        };
        for s in gen_scenes(&cfg, 4, 1, Split::Train).unwrap() {
            for p in &s.proposals {
                assert!(s.gts.iter().any(|g| iou(p, &g.bbox) == 1.0));
            }
        }
    }

    #[test]
    fn every_object_covered() {
        let cfg = DataConfig {
            jitter_scales: alloc::vec![0.5],
            ..DataConfig::default()
        };
        for s in gen_scenes(&cfg, 20, 2, Split::Train).unwrap() {
            for g in &s.gts {
                assert!(s.proposals.iter().any(|p| iou(p, &g.bbox) >= COVERAGE_IOU));
            }
            assert!(s.features.iter().all(|f| f.len() == feature_dim(cfg.num_classes)));
        }
    }

    #[test]
    fn oversized_objects_rejected() {
        let cfg = DataConfig {
            max_object_size: 500.0,
            ..DataConfig::default()
        };
        assert!(gen_scenes(&cfg, 1, 0, Split::Train).is_err());
    }
}
