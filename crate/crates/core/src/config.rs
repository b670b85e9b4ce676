//! Experiment configuration. Every section rejects unknown keys and fills
//! missing ones with defaults.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{coco_thresholds, DEFAULT_NMS_IOU};
use crate::hlr::DEFAULT_CLUSTER_IOU;
use crate::isr::WeightCurve;
use crate::losses::{CarlConfig, LossConfig, DEFAULT_DELTA_STD};

/// How samples of one polarity enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Uniform random subset.
    R,
    /// Highest classification loss.
    H,
    /// Random subset, reweighted by prime-sample importance.
    P,
}

impl Strategy {
    pub fn letter(self) -> char {
        match self {
            Strategy::R => 'R',
            Strategy::H => 'H',
            Strategy::P => 'P',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub image_size: f64,
    pub num_classes: usize,
    pub train_images: usize,
    pub eval_images: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_object_size: f64,
    pub max_object_size: f64,
    pub proposals_per_object: usize,
    /// Unannotated look-alikes per scene, drawn from `0..=max_distractors`.
    pub max_distractors: usize,
    /// Class evidence of a look-alike relative to a real object.
    pub distractor_strength: f64,
    pub background_proposals: usize,
    /// Corner jitter standard deviations, as fractions of object size.
    pub jitter_scales: Vec<f64>,
    /// Noise on the class-evidence channels.
    pub class_noise: f64,
    /// Offset-cue noise for the most reliable proposals.
    pub offset_noise_min: f64,
    /// Offset-cue noise for the least reliable proposals.
    pub offset_noise_max: f64,
    /// Noise on the observed reliability cue.
    pub reliability_noise: f64,
    /// Noise on the overlap-quality cue.
    pub quality_noise: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            image_size: 128.0,
            num_classes: 3,
            train_images: 200,
            eval_images: 150,
            min_objects: 2,
            max_objects: 4,
            min_object_size: 20.0,
            max_object_size: 48.0,
            proposals_per_object: 12,
            max_distractors: 2,
            distractor_strength: 0.7,
            background_proposals: 16,
            jitter_scales: vec![0.04, 0.08, 0.14, 0.22],
            class_noise: 0.15,
            offset_noise_min: 0.01,
            offset_noise_max: 0.12,
            reliability_noise: 0.1,
            quality_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Standard deviation of the initial weights.
    pub init_scale: f64,
    /// The regressor predicts offsets divided by these.
    pub delta_std: [f64; 4],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            init_scale: 0.01,
            delta_std: DEFAULT_DELTA_STD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Scenes per mini-batch.
    pub batch_images: usize,
    pub seed: u64,
    /// Global gradient-norm cap.
    pub grad_clip: f64,
    /// Multiplier on the plain smooth-L1 term.
    pub reg_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.2,
            batch_images: 4,
            seed: 0,
            grad_clip: 5.0,
            reg_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub pos: Strategy,
    pub neg: Strategy,
    /// Samples drawn per mini-batch.
    pub batch_rois: usize,
    pub pos_fraction: f64,
    pub pos_iou: f64,
    pub neg_iou: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            pos: Strategy::P,
            neg: Strategy::P,
            batch_rois: 128,
            pos_fraction: crate::assignment::DEFAULT_POS_FRACTION,
            pos_iou: crate::assignment::DEFAULT_POS_IOU,
            neg_iou: crate::assignment::DEFAULT_NEG_IOU,
        }
    }
}

/// Which classes set the shared rank normalizer `n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmaxScope {
    /// Foreground classes and the background class together.
    Joint,
    /// Positives use the largest foreground class, negatives their own count.
    PerPolarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IsrConfig {
    pub enable_pos: bool,
    pub enable_neg: bool,
    pub gamma_pos: f64,
    pub beta_pos: f64,
    pub gamma_neg: f64,
    pub beta_neg: f64,
    /// NMS threshold that clusters negatives before ranking.
    pub cluster_iou: f64,
    pub nmax_scope: NmaxScope,
}

impl Default for IsrConfig {
    fn default() -> Self {
        IsrConfig {
            enable_pos: true,
            enable_neg: true,
            gamma_pos: WeightCurve::POSITIVE_DEFAULT.gamma,
            beta_pos: WeightCurve::POSITIVE_DEFAULT.beta,
            gamma_neg: WeightCurve::NEGATIVE_DEFAULT.gamma,
            beta_neg: WeightCurve::NEGATIVE_DEFAULT.beta,
            cluster_iou: DEFAULT_CLUSTER_IOU,
            nmax_scope: NmaxScope::PerPolarity,
        }
    }
}

impl IsrConfig {
    pub fn pos_curve(&self) -> WeightCurve {
        WeightCurve {
            gamma: self.gamma_pos,
            beta: self.beta_pos,
        }
    }

    pub fn neg_curve(&self) -> WeightCurve {
        WeightCurve {
            gamma: self.gamma_neg,
            beta: self.beta_neg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub nms_iou: f64,
    /// Detections below this score are dropped before NMS.
    pub score_floor: f64,
    pub max_dets_per_image: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: coco_thresholds(),
            nms_iou: DEFAULT_NMS_IOU,
            score_floor: 0.0,
            max_dets_per_image: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
    pub isr: IsrConfig,
    pub carl: CarlConfig,
    pub eval: EvalConfig,
}

fn bad(msg: String) -> Error {
    Error::Config(msg)
}

impl ExperimentConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            reg_weight: self.train.reg_weight,
            delta_std: self.model.delta_std,
            carl: self.carl,
        }
    }

    /// Plain random sampling with every prime-sample component off.
    pub fn baseline() -> Self {
        Self::default().with_strategies(Strategy::R, Strategy::R)
    }

    /// Set both strategies and the matching components: prime positives turn
    /// on positive reweighting and CARL, prime negatives turn on negative
    /// reweighting.
    pub fn with_strategies(mut self, pos: Strategy, neg: Strategy) -> Self {
        self.sampling.pos = pos;
        self.sampling.neg = neg;
        self.isr.enable_pos = pos == Strategy::P;
        self.carl.enable = pos == Strategy::P;
        self.isr.enable_neg = neg == Strategy::P;
        self
    }

    /// Random sampling plus an explicit component selection.
    pub fn with_components(mut self, isr_pos: bool, isr_neg: bool, carl: bool) -> Self {
        self.sampling.pos = if isr_pos || carl { Strategy::P } else { Strategy::R };
        self.sampling.neg = if isr_neg { Strategy::P } else { Strategy::R };
        self.isr.enable_pos = isr_pos;
        self.isr.enable_neg = isr_neg;
        self.carl.enable = carl;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.num_classes == 0 {
            return Err(bad("data.num_classes must be positive".into()));
        }
        if !(d.image_size > 0.0 && d.image_size.is_finite()) {
            return Err(bad("data.image_size must be positive".into()));
        }
        if d.min_objects == 0 || d.min_objects > d.max_objects {
            return Err(bad("data.min_objects must be in 1..=max_objects".into()));
        }
        if !(d.min_object_size > 1.0 && d.min_object_size <= d.max_object_size) {
            return Err(bad("data object sizes must satisfy 1 < min <= max".into()));
        }
        if d.max_object_size >= d.image_size {
            return Err(bad(format!(
                "objects up to {} cannot fit an image of {}",
                d.max_object_size, d.image_size
            )));
        }
        if d.proposals_per_object == 0 {
            return Err(bad("data.proposals_per_object must be positive".into()));
        }
        if d.jitter_scales.is_empty() || d.jitter_scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(bad("data.jitter_scales must be non-empty and non-negative".into()));
        }
        for (name, v) in [
            ("class_noise", d.class_noise),
            ("distractor_strength", d.distractor_strength),
            ("offset_noise_min", d.offset_noise_min),
            ("offset_noise_max", d.offset_noise_max),
            ("reliability_noise", d.reliability_noise),
            ("quality_noise", d.quality_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(format!("data.{name} must be non-negative")));
            }
        }
        if d.offset_noise_min > d.offset_noise_max {
            return Err(bad("data.offset_noise_min must not exceed offset_noise_max".into()));
        }
        if d.train_images == 0 {
            return Err(bad("data.train_images must be positive".into()));
        }
        let t = &self.train;
        if t.batch_images == 0 {
            return Err(bad("train.batch_images must be positive".into()));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) || !(t.grad_clip > 0.0) {
            return Err(bad("train.lr and train.grad_clip must be positive".into()));
        }
        if !(self.model.init_scale >= 0.0 && self.model.init_scale.is_finite()) {
            return Err(bad("model.init_scale must be non-negative".into()));
        }
        if self.model.delta_std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(bad("model.delta_std entries must be positive".into()));
        }
        let s = &self.sampling;
        if s.batch_rois == 0 || !(0.0..=1.0).contains(&s.pos_fraction) {
            return Err(bad("sampling.batch_rois > 0 and pos_fraction in [0, 1] required".into()));
        }
        if !(s.pos_iou > 0.0 && s.pos_iou <= 1.0 && s.neg_iou > 0.0 && s.neg_iou <= s.pos_iou) {
            return Err(bad("sampling thresholds need 0 < neg_iou <= pos_iou <= 1".into()));
        }
        let i = &self.isr;
        i.pos_curve().validate().map_err(|e| bad(format!("isr (positive): {e}")))?;
        i.neg_curve().validate().map_err(|e| bad(format!("isr (negative): {e}")))?;
        if !(0.0..=1.0).contains(&i.cluster_iou) {
            return Err(bad("isr.cluster_iou must lie in [0, 1]".into()));
        }
        let pos_prime = s.pos == Strategy::P;
        let neg_prime = s.neg == Strategy::P;
        if (i.enable_pos || self.carl.enable) && !pos_prime {
            return Err(bad(
                "isr.enable_pos and carl.enable need sampling.pos = \"P\"".into(),
            ));
        }
        if i.enable_neg && !neg_prime {
            return Err(bad("isr.enable_neg needs sampling.neg = \"P\"".into()));
        }
        if pos_prime && !(i.enable_pos || self.carl.enable) {
            return Err(bad(
                "sampling.pos = \"P\" needs isr.enable_pos or carl.enable".into(),
            ));
        }
        if neg_prime && !i.enable_neg {
            return Err(bad("sampling.neg = \"P\" needs isr.enable_neg".into()));
        }
        let c = &self.carl;
        if !(c.k > 0.0 && c.k.is_finite()) || !(0.0..1.0).contains(&c.b) || !(c.weight >= 0.0) {
            return Err(bad("carl needs k > 0, b in [0, 1), weight >= 0".into()));
        }
        if !(t.reg_weight >= 0.0 && t.reg_weight.is_finite()) {
            return Err(bad("train.reg_weight must be non-negative".into()));
        }
        let e = &self.eval;
        if e.thresholds.is_empty() || e.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(bad("eval.thresholds must be non-empty and in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&e.nms_iou) || e.max_dets_per_image == 0 {
            return Err(bad("eval.nms_iou in [0, 1] and max_dets_per_image > 0 required".into()));
        }
        Ok(())
    }
}
