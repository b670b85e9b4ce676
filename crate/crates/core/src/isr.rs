//! Importance-based sample reweighting: ranks become importance values,
//! importance becomes a loss weight, and weights are rescaled so the summed
//! cross-entropy of each polarity is unchanged.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Result};
use crate::hlr::HlrResult;

/// Shape parameters of the weight curve `((1 - beta) * u + beta) ^ gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightCurve {
    pub gamma: f64,
    pub beta: f64,
}

impl WeightCurve {
    pub const POSITIVE_DEFAULT: WeightCurve = WeightCurve {
        gamma: 2.0,
        beta: 0.0,
    };
    pub const NEGATIVE_DEFAULT: WeightCurve = WeightCurve {
        gamma: 0.5,
        beta: 0.0,
    };

    /// `gamma = 0` is accepted as the flat limit (every weight 1).
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(invalid("gamma", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(invalid("beta", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn weight(&self, u: f64) -> f64 {
        libm::pow((1.0 - self.beta) * u + self.beta, self.gamma)
    }
}

/// Linear rank-to-importance map shared by every class:
/// `u = (n_max - r) / n_max` with `n_max` the largest class size.
pub fn rank_to_importance(ranks_by_class: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    let n_max = ranks_by_class.iter().map(Vec::len).max().unwrap_or(0);
    for ranks in ranks_by_class {
        if let Some(&r) = ranks.iter().find(|&&r| r >= ranks.len()) {
            return Err(invalid(
                "rank",
                alloc::format!("rank {r} outside 0..{}", ranks.len()),
            ));
        }
    }
    Ok(ranks_by_class
        .iter()
        .map(|ranks| ranks.iter().map(|&r| importance(r, n_max)).collect())
        .collect())
}

#[inline]
fn importance(rank: usize, n_max: usize) -> f64 {
    (n_max - rank) as f64 / n_max as f64
}

pub fn importance_to_weight(u: f64, gamma: f64, beta: f64) -> Result<f64> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(invalid("gamma", "must be positive"));
    }
    let curve = WeightCurve { gamma, beta };
    curve.validate()?;
    if !(0.0..=1.0).contains(&u) {
        return Err(invalid("u", "importance must lie in [0, 1]"));
    }
    Ok(curve.weight(u))
}

/// Rescale `w` so that `sum(w' * ce) == sum(ce)`.
///
/// A batch whose weighted loss is zero returns `w` untouched.
pub fn normalize_weights(w: &[f64], ce_losses: &[f64]) -> Result<Vec<f64>> {
    ensure_len("weights vs losses", w.len(), ce_losses.len())?;
    if ce_losses.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
        return Err(invalid("ce_losses", "losses must be finite and non-negative"));
    }
    let total: f64 = ce_losses.iter().sum();
    let weighted: f64 = w.iter().zip(ce_losses).map(|(a, b)| a * b).sum();
    if weighted <= 0.0 {
        return Ok(w.to_vec());
    }
    let scale = total / weighted;
    Ok(w.iter().map(|x| x * scale).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleWeight {
    pub sample: usize,
    pub class_id: usize,
    pub u: f64,
    pub w: f64,
    pub w_norm: f64,
}

/// Importance, raw weight and normalized weight for one polarity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightSet {
    pub entries: Vec<SampleWeight>,
}

impl WeightSet {
    /// Weights for the samples ranked in `hlr`; `n_max` is the largest
    /// per-class sample count in the mini-batch (see [`max_class_size`]).
    pub fn from_ranks(hlr: &HlrResult, n_max: usize, curve: WeightCurve) -> Result<Self> {
        curve.validate()?;
        if hlr.is_empty() {
            return Ok(WeightSet::default());
        }
        if let Some(e) = hlr.entries.iter().find(|e| e.hlr >= n_max) {
            return Err(invalid(
                "n_max",
                alloc::format!("rank {} does not fit n_max {n_max}", e.hlr),
            ));
        }
        let entries = hlr
            .entries
            .iter()
            .map(|e| {
                let u = importance(e.hlr, n_max);
                let w = curve.weight(u);
                SampleWeight {
                    sample: e.sample,
                    class_id: e.class_id,
                    u,
                    w,
                    w_norm: w,
                }
            })
            .collect();
        Ok(WeightSet { entries })
    }

    /// Fill `w_norm` given per-sample cross-entropy indexed by batch sample.
    pub fn normalize(&mut self, ce_by_sample: &[f64]) -> Result<()> {
        let w: Vec<f64> = self.entries.iter().map(|e| e.w).collect();
        let ce: Vec<f64> = self
            .entries
            .iter()
            .map(|e| ce_by_sample.get(e.sample).copied().ok_or_else(|| invalid("ce", "sample index out of range")))
            .collect::<Result<_>>()?;
        for (e, wn) in self.entries.iter_mut().zip(normalize_weights(&w, &ce)?) {
            e.w_norm = wn;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Largest per-class count across the supplied rankings.
pub fn max_class_size(rankings: &[&HlrResult]) -> usize {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for r in rankings {
        for e in &r.entries {
            match counts.iter_mut().find(|(c, _)| *c == e.class_id) {
                Some((_, n)) => *n += 1,
                None => counts.push((e.class_id, 1)),
            }
        }
    }
    counts.into_iter().map(|(_, n)| n).max().unwrap_or(0)
}
