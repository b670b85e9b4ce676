//! Budgeted score boosting: raise the target-class logit of selected
//! positives by one shared amount until the positives' classification loss
//! has dropped by a requested fraction, then re-evaluate.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{assign, Label};
use crate::config::ExperimentConfig;
use crate::error::{invalid, Result};
use crate::eval::{coco_map, EvalReport};
use crate::geometry::iou;
use crate::harness::head::DetectorHead;
use crate::harness::scene::SyntheticScene;
use crate::harness::train::{detections_from, image_record, predict_scene, ScenePrediction};
use crate::hlr::hierarchical_rank;
use crate::losses::{cross_entropy, softmax};

/// Upper end of the boost search, in logit units.
pub const MAX_BOOST: f64 = 60.0;
/// Relative tolerance on the achieved loss reduction.
pub const BUDGET_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostSelection {
    /// The `k` best IoU-HLR positives of each scene.
    TopHlr,
    /// `k` uniformly drawn positives of each scene.
    Random { seed: u64 },
}

impl BoostSelection {
    pub fn name(&self) -> String {
        match self {
            BoostSelection::TopHlr => "top_hlr".into(),
            BoostSelection::Random { seed } => alloc::format!("random_{seed}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostRow {
    pub theta: f64,
    pub baseline_ap: f64,
    pub boosted_ap: f64,
    pub delta_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostOutcome {
    pub selection: BoostSelection,
    pub k: usize,
    pub budget: f64,
    pub num_selected: usize,
    /// Summed cross-entropy of every positive before boosting.
    pub baseline_loss: f64,
    pub requested_reduction: f64,
    pub achieved_reduction: f64,
    /// False when even [`MAX_BOOST`] cannot meet the budget.
    pub reachable: bool,
    pub boost: f64,
    pub baseline_map: f64,
    pub boosted_map: f64,
    pub rows: Vec<BoostRow>,
}

struct Candidate {
    scene: usize,
    proposal: usize,
    target: usize,
    logits: Vec<f64>,
}

impl Candidate {
    fn loss(&self, boost: f64) -> f64 {
        let mut z = self.logits.clone();
        z[self.target] += boost;
        cross_entropy(&softmax(&z), self.target)
    }
}

/// A scene's positives: proposal index, matched object, target class, and
/// post-regression IoU.
struct ScenePositives {
    index: Vec<usize>,
    group: Vec<usize>,
    target: Vec<usize>,
    key: Vec<f64>,
}

fn scene_positives(scene: &SyntheticScene, pred: &ScenePrediction, cfg: &ExperimentConfig) -> Result<ScenePositives> {
    let a = assign(
        &scene.proposals,
        &scene.gts,
        cfg.data.num_classes,
        cfg.sampling.pos_iou,
        cfg.sampling.neg_iou,
    )?;
    let mut out = ScenePositives {
        index: Vec::new(),
        group: Vec::new(),
        target: Vec::new(),
        key: Vec::new(),
    };
    for (i, m) in a.matches.iter().enumerate() {
        if m.label != Label::Positive {
            continue;
        }
        let g = m.matched_gt.ok_or_else(|| invalid("assignment", "positive without ground truth"))?;
        out.index.push(i);
        out.group.push(g);
        out.target.push(m.target_class);
        out.key.push(iou(&pred.boxes[i], &scene.gts[g].bbox));
    }
    Ok(out)
}

/// Boost `k` positives per scene so that the positives' summed
/// cross-entropy falls by `budget` of its initial value, and report AP per
/// threshold before and after.
pub fn simulate_boost(
    head: &DetectorHead,
    scenes: &[SyntheticScene],
    cfg: &ExperimentConfig,
    k: usize,
    budget: f64,
    selection: BoostSelection,
) -> Result<BoostOutcome> {
    if !(0.0..1.0).contains(&budget) {
        return Err(invalid("budget", "must lie in [0, 1)"));
    }
    let mut rng = match selection {
        BoostSelection::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        BoostSelection::TopHlr => None,
    };
    let mut preds = Vec::with_capacity(scenes.len());
    let mut chosen = Vec::new();
    let mut baseline_loss = 0.0;
    for (s, scene) in scenes.iter().enumerate() {
        let pred = predict_scene(head, scene, cfg.model.delta_std)?;
        let pos = scene_positives(scene, &pred, cfg)?;
        for (&i, &t) in pos.index.iter().zip(&pos.target) {
            baseline_loss += cross_entropy(&pred.probs[i], t);
        }
        let n = pos.index.len();
        let take = k.min(n);
        let picked: Vec<usize> = match rng.as_mut() {
            None => {
                let ranks = hierarchical_rank(&pos.key, &pos.group);
                let mut by_rank: Vec<usize> = (0..n).collect();
                by_rank.sort_by_key(|&j| ranks[j].1);
                by_rank.truncate(take);
                by_rank
            }
            Some(r) => {
                let mut v = index::sample(r, n, take).into_vec();
                v.sort_unstable();
                v
            }
        };
        for j in picked {
            let i = pos.index[j];
            chosen.push(Candidate {
                scene: s,
                proposal: i,
                target: pos.target[j],
                logits: head.logits(&scene.features[i]),
            });
        }
        preds.push(pred);
    }

    let reduction = |boost: f64| -> f64 { chosen.iter().map(|c| c.loss(0.0) - c.loss(boost)).sum() };
    let requested = budget * baseline_loss;
    let ceiling = reduction(MAX_BOOST);
    let (boost, achieved, reachable) = if requested == 0.0 {
        (0.0, 0.0, true)
    } else if ceiling < requested {
        (MAX_BOOST, ceiling, false)
    } else {
        let (mut lo, mut hi) = (0.0, MAX_BOOST);
        let mut mid = 0.5 * (lo + hi);
        for _ in 0..200 {
            mid = 0.5 * (lo + hi);
            let r = reduction(mid);
            if (r - requested).abs() <= BUDGET_TOLERANCE * requested {
                break;
            }
            if r < requested {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (mid, reduction(mid), true)
    };

    let baseline = evaluate_predictions(scenes, &preds, cfg)?;
    let mut boosted_preds = preds;
    if boost > 0.0 {
        for c in &chosen {
            let mut z = c.logits.clone();
            z[c.target] += boost;
            boosted_preds[c.scene].probs[c.proposal] = softmax(&z);
        }
    }
    let boosted = evaluate_predictions(scenes, &boosted_preds, cfg)?;
    let rows = cfg
        .eval
        .thresholds
        .iter()
        .zip(baseline.ap_by_threshold.iter().zip(&boosted.ap_by_threshold))
        .map(|(&theta, (b, a))| {
            let (b, a) = (b.unwrap_or(0.0), a.unwrap_or(0.0));
            BoostRow {
                theta,
                baseline_ap: b,
                boosted_ap: a,
                delta_ap: a - b,
            }
        })
        .collect();
    Ok(BoostOutcome {
        selection,
        k,
        budget,
        num_selected: chosen.len(),
        baseline_loss,
        requested_reduction: requested,
        achieved_reduction: achieved,
        reachable,
        boost,
        baseline_map: baseline.map.unwrap_or(0.0),
        boosted_map: boosted.map.unwrap_or(0.0),
        rows,
    })
}

fn evaluate_predictions(
    scenes: &[SyntheticScene],
    preds: &[ScenePrediction],
    cfg: &ExperimentConfig,
) -> Result<EvalReport> {
    let records: Vec<_> = scenes
        .iter()
        .zip(preds)
        .map(|(s, p)| image_record(s, detections_from(p, cfg.data.num_classes, cfg)))
        .collect();
    coco_map(&records, &cfg.eval.thresholds)
}
