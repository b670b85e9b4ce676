//! Classification and regression losses with hand-derived gradients.
//!
//! All gradients are exact. For the classification-aware regression loss
//! (CARL) the coupling through the batch sum `S = sum(v)` is kept, so the
//! derivative with respect to each probability carries a cross term that the
//! large-batch approximation in [`carl_grad_approx`] drops.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::assignment::{Label, SampleBatch};
use crate::error::{ensure_len, invalid, Error, Result};
use crate::geometry::Delta;

/// Numerically stable normalized exponential.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| libm::exp(z - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-ln(p[target])`.
pub fn cross_entropy(probs: &[f64], target: usize) -> f64 {
    -libm::log(probs[target])
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightedCe {
    pub loss: f64,
    /// Unweighted per-sample cross-entropy.
    pub per_sample: Vec<f64>,
    /// Gradient of `loss` with respect to each sample's logits.
    pub grad_logits: Vec<Vec<f64>>,
}

/// `sum_i w_i * CE(p_i, t_i)` for probability vectors produced by
/// [`softmax`]; the gradient is taken with respect to the logits.
pub fn weighted_ce(probs: &[Vec<f64>], targets: &[usize], weights: &[f64]) -> Result<WeightedCe> {
    ensure_len("targets", probs.len(), targets.len())?;
    ensure_len("weights", probs.len(), weights.len())?;
    let mut out = WeightedCe {
        loss: 0.0,
        per_sample: Vec::with_capacity(probs.len()),
        grad_logits: Vec::with_capacity(probs.len()),
    };
    for ((p, &t), &w) in probs.iter().zip(targets).zip(weights) {
        if t >= p.len() {
            return Err(invalid("target", "class index outside score vector"));
        }
        if !w.is_finite() || p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classification inputs"));
        }
        let ce = cross_entropy(p, t);
        if !ce.is_finite() {
            return Err(Error::NonFinite("cross-entropy"));
        }
        out.loss += w * ce;
        out.per_sample.push(ce);
        let mut g: Vec<f64> = p.iter().map(|&pk| w * pk).collect();
        g[t] -= w;
        out.grad_logits.push(g);
    }
    Ok(out)
}

/// CARL shape parameters and how the term enters the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlConfig {
    pub enable: bool,
    pub k: f64,
    pub b: f64,
    /// Multiplier on the CARL term.
    pub weight: f64,
    /// Drop the plain smooth-L1 term when CARL is on.
    pub replace_reg: bool,
}

impl Default for CarlConfig {
    fn default() -> Self {
        CarlConfig {
            enable: true,
            k: 1.0,
            b: 0.2,
            weight: 1.0,
            replace_reg: false,
        }
    }
}

fn check_carl_params(p: &[f64], reg_losses: &[f64], k: f64, b: f64) -> Result<()> {
    ensure_len("regression losses", p.len(), reg_losses.len())?;
    if !(k > 0.0 && k.is_finite()) {
        return Err(invalid("k", "must be positive"));
    }
    if !(0.0..1.0).contains(&b) {
        return Err(invalid("b", "must lie in [0, 1)"));
    }
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(invalid("p", "probabilities must lie in [0, 1]"));
    }
    if reg_losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("regression losses"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CarlOutput {
    pub loss: f64,
    pub v: Vec<f64>,
    /// `v_i / mean(v)`.
    pub c: Vec<f64>,
    /// Exact `dL/dp_i`.
    pub grad_p: Vec<f64>,
    /// `dL/dL_i`, which equals `c_i`.
    pub grad_reg: Vec<f64>,
    /// `L_i * dc_i/dp_i`, the part of `grad_p` through the sample's own factor.
    pub self_term: Vec<f64>,
    /// Remainder of `grad_p` that flows through the other samples' factors.
    pub cross_term: Vec<f64>,
    pub sum_v: f64,
}

#[inline]
fn carl_v(p: f64, k: f64, b: f64) -> f64 {
    libm::pow((1.0 - b) * p + b, k)
}

#[inline]
fn carl_dv_dp(p: f64, k: f64, b: f64) -> f64 {
    (1.0 - b) * k * libm::pow((1.0 - b) * p + b, k - 1.0)
}

/// `sum_i c_i * L_i` with `c_i = v_i / mean(v)`, `v_i = ((1 - b) p_i + b)^k`.
pub fn carl(p: &[f64], reg_losses: &[f64], k: f64, b: f64) -> Result<CarlOutput> {
    check_carl_params(p, reg_losses, k, b)?;
    let n = p.len();
    if n == 0 {
        return Ok(CarlOutput::default());
    }
    let v: Vec<f64> = p.iter().map(|&x| carl_v(x, k, b)).collect();
    let s: f64 = v.iter().sum();
    if !(s > 0.0) {
        return Err(Error::Degenerate("CARL factors sum to zero"));
    }
    let nf = n as f64;
    let c: Vec<f64> = v.iter().map(|&vi| nf * vi / s).collect();
    let loss: f64 = c.iter().zip(reg_losses).map(|(ci, li)| ci * li).sum();
    let weighted_mean: f64 = v.iter().zip(reg_losses).map(|(vi, li)| vi * li).sum::<f64>() / s;

    let mut grad_p = Vec::with_capacity(n);
    let mut self_term = Vec::with_capacity(n);
    let mut cross_term = Vec::with_capacity(n);
    for i in 0..n {
        let dv = carl_dv_dp(p[i], k, b);
        let scale = nf / s * dv;
        let own = reg_losses[i] * scale * (1.0 - v[i] / s);
        let total = scale * (reg_losses[i] - weighted_mean);
        grad_p.push(total);
        self_term.push(own);
        cross_term.push(total - own);
    }
    Ok(CarlOutput {
        loss,
        v,
        grad_reg: c.clone(),
        c,
        grad_p,
        self_term,
        cross_term,
        sum_v: s,
    })
}

/// Large-batch approximation `dL/dp_i ~ (n / S) * dv_i/dp_i * L_i`.
///
/// Only meaningful when every `v_i` is small next to `S`; a single sample
/// has `v_1 = S` and is refused.
pub fn carl_grad_approx(p: &[f64], reg_losses: &[f64], k: f64, b: f64) -> Result<Vec<f64>> {
    check_carl_params(p, reg_losses, k, b)?;
    let n = p.len();
    if n < 2 {
        return Err(Error::Degenerate(
            "large-batch CARL approximation needs at least two samples",
        ));
    }
    let s: f64 = p.iter().map(|&x| carl_v(x, k, b)).sum();
    if !(s > 0.0) {
        return Err(Error::Degenerate("CARL factors sum to zero"));
    }
    let nf = n as f64;
    Ok(p
        .iter()
        .zip(reg_losses)
        .map(|(&pi, &li)| nf / s * carl_dv_dp(pi, k, b) * li)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub reg_weight: f64,
    /// Offsets are divided by these before the smooth-L1 is taken.
    pub delta_std: [f64; 4],
    pub carl: CarlConfig,
}

/// Conventional per-offset scale for regression targets.
pub const DEFAULT_DELTA_STD: [f64; 4] = [0.1, 0.1, 0.2, 0.2];

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            reg_weight: 1.0,
            delta_std: DEFAULT_DELTA_STD,
            carl: CarlConfig::default(),
        }
    }
}

/// Loss values and gradients for one batch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    /// Weighted cross-entropy averaged over non-ignored samples.
    pub cls_loss: f64,
    /// Smooth-L1 of the scaled offsets averaged over positives.
    pub reg_loss: f64,
    /// CARL averaged over positives (0 when disabled).
    pub carl_loss: f64,
    pub total: f64,
    pub per_sample_ce: Vec<f64>,
    /// Gradient of `total` with respect to each sample's logits.
    pub grad_scores: Vec<Vec<f64>>,
    /// Gradient of `total` with respect to each sample's regression output.
    pub grad_deltas: Vec<Delta>,
}

/// Per-sample classification weights: 1 for every labelled sample, 0 for
/// ignored ones.
pub fn uniform_cls_weights(batch: &SampleBatch) -> Vec<f64> {
    batch
        .assignment
        .matches
        .iter()
        .map(|m| if m.label == Label::Ignored { 0.0 } else { 1.0 })
        .collect()
}

/// Classification + regression (+ CARL) for a batch.
///
/// `cls_weights` is aligned with the batch (normalized ISR weights or
/// [`uniform_cls_weights`]). Weights are treated as constants.
pub fn total_loss(batch: &SampleBatch, cls_weights: &[f64], cfg: &LossConfig) -> Result<LossBundle> {
    let n = batch.len();
    ensure_len("classification weights", n, cls_weights.len())?;
    let targets: Vec<usize> = batch.assignment.matches.iter().map(|m| m.target_class).collect();
    let mut weights = cls_weights.to_vec();
    for (w, m) in weights.iter_mut().zip(&batch.assignment.matches) {
        if m.label == Label::Ignored {
            *w = 0.0;
        }
    }
    let counted = batch
        .assignment
        .matches
        .iter()
        .filter(|m| m.label != Label::Ignored)
        .count();
    let ce = weighted_ce(&batch.class_scores, &targets, &weights)?;
    let cls_norm = if counted > 0 { 1.0 / counted as f64 } else { 0.0 };
    let mut grad_scores: Vec<Vec<f64>> = ce
        .grad_logits
        .into_iter()
        .map(|g| g.into_iter().map(|x| x * cls_norm).collect())
        .collect();
    let cls_loss = ce.loss * cls_norm;

    let pos: Vec<usize> = batch.assignment.positives().collect();
    let mut grad_deltas = vec![Delta::ZERO; n];
    let mut reg_loss = 0.0;
    let mut carl_loss = 0.0;
    if !pos.is_empty() {
        let inv_pos = 1.0 / pos.len() as f64;
        if cfg.delta_std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(invalid("delta_std", "must be positive"));
        }
        let inv_std = cfg.delta_std.map(|s| 1.0 / s);
        let mut l = Vec::with_capacity(pos.len());
        let mut dl = Vec::with_capacity(pos.len());
        for &i in &pos {
            let t = batch.reg_target[i]
                .ok_or_else(|| invalid("reg_target", "positive sample without regression target"))?;
            let (d, t) = (batch.reg_delta[i].scaled(inv_std), t.scaled(inv_std));
            l.push(d.smooth_l1_to(&t));
            dl.push(d.smooth_l1_grad(&t).scaled(inv_std));
        }
        reg_loss = l.iter().sum::<f64>() * inv_pos;
        let plain_weight = if cfg.carl.enable && cfg.carl.replace_reg {
            0.0
        } else {
            cfg.reg_weight
        };
        let mut per_pos_scale = vec![plain_weight * inv_pos; pos.len()];

        if cfg.carl.enable {
            let p: Vec<f64> = pos.iter().map(|&i| batch.target_score(i)).collect();
            let out = carl(&p, &l, cfg.carl.k, cfg.carl.b)?;
            carl_loss = out.loss * inv_pos;
            let cw = cfg.carl.weight * inv_pos;
            for (j, &i) in pos.iter().enumerate() {
                per_pos_scale[j] += cw * out.grad_reg[j];
                // dp/dz_k = p (onehot_t - p_k)
                let probs = &batch.class_scores[i];
                let t = targets[i];
                let gp = cw * out.grad_p[j] * probs[t];
                for (k, g) in grad_scores[i].iter_mut().enumerate() {
                    let onehot = if k == t { 1.0 } else { 0.0 };
                    *g += gp * (onehot - probs[k]);
                }
            }
        }
        for (j, &i) in pos.iter().enumerate() {
            let s = per_pos_scale[j];
            let d = dl[j];
            grad_deltas[i] = Delta::new(d.dx * s, d.dy * s, d.dw * s, d.dh * s);
        }
    }

    let reg_term = if cfg.carl.enable && cfg.carl.replace_reg {
        0.0
    } else {
        cfg.reg_weight * reg_loss
    };
    let carl_term = if cfg.carl.enable {
        cfg.carl.weight * carl_loss
    } else {
        0.0
    };
    let total = cls_loss + reg_term + carl_term;
    if !total.is_finite() {
        return Err(Error::NonFinite("total loss"));
    }
    Ok(LossBundle {
        cls_loss,
        reg_loss,
        carl_loss,
        total,
        per_sample_ce: ce.per_sample,
        grad_scores,
        grad_deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_ce() {
        let out = weighted_ce(&[vec![0.0, 1.0]], &[1], &[1.0]).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn carl_hand_example() {
        let out = carl(&[1.0, 0.0], &[1.0, 2.0], 1.0, 0.2).unwrap();
        assert!((out.v[0] - 1.0).abs() < 1e-15 && (out.v[1] - 0.2).abs() < 1e-15);
        assert!((out.c[0] - 5.0 / 3.0).abs() < 1e-12);
        assert!((out.c[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((out.loss - 7.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn carl_equal_probabilities() {
        let out = carl(&[0.4; 5], &[1.0, 2.0, 3.0, 4.0, 5.0], 2.0, 0.1).unwrap();
        assert!(out.c.iter().all(|c| (c - 1.0).abs() < 1e-12));
        assert!((out.loss - 15.0).abs() < 1e-12);
    }

    #[test]
    fn carl_empty_and_bad_params() {
        let out = carl(&[], &[], 1.0, 0.2).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_p.is_empty());
        assert!(carl(&[0.5], &[1.0], 0.0, 0.2).is_err());
        assert!(carl(&[0.5], &[1.0], 1.0, 1.0).is_err());
        assert!(carl(&[1.5], &[1.0], 1.0, 0.2).is_err());
        assert!(carl(&[0.0, 0.0], &[1.0, 1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn approx_refuses_single_sample() {
        assert!(matches!(
            carl_grad_approx(&[0.7], &[1.0], 1.0, 0.2),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn approx_is_proportional_for_linear_k() {
        let p = [0.1, 0.5, 0.9, 0.3];
        let l = [0.2, 1.0, 3.0, 0.7];
        let g = carl_grad_approx(&p, &l, 1.0, 0.2).unwrap();
        let s: f64 = p.iter().map(|x| 0.8 * x + 0.2).sum();
        for (gi, li) in g.iter().zip(l) {
            assert!((gi - 4.0 * 0.8 / s * li).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 0.0, -1000.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(p[0] > 0.999);
    }
}
