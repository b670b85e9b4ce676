//! Linear detector head: a softmax classifier over `C + 1` classes and a
//! class-agnostic offset regressor, both on the same feature vector.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::Delta;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorHead {
    pub num_features: usize,
    pub num_classes: usize,
    /// `(C + 1) x F`, row per class.
    pub cls_weight: Vec<f64>,
    pub cls_bias: Vec<f64>,
    /// `4 x F`, row per offset.
    pub reg_weight: Vec<f64>,
    pub reg_bias: [f64; 4],
}

impl DetectorHead {
    pub fn zeros(num_features: usize, num_classes: usize) -> Self {
        DetectorHead {
            num_features,
            num_classes,
            cls_weight: vec![0.0; (num_classes + 1) * num_features],
            cls_bias: vec![0.0; num_classes + 1],
            reg_weight: vec![0.0; 4 * num_features],
            reg_bias: [0.0; 4],
        }
    }

    /// Gaussian weights with standard deviation `scale`, zero biases.
    pub fn init(num_features: usize, num_classes: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut head = Self::zeros(num_features, num_classes);
        for w in head.cls_weight.iter_mut().chain(head.reg_weight.iter_mut()) {
            let z: f64 = rng.sample(StandardNormal);
            *w = scale * z;
        }
        head
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.cls_weight
            .chunks_exact(self.num_features)
            .zip(&self.cls_bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect()
    }

    pub fn delta(&self, x: &[f64]) -> Delta {
        let mut d = [0.0; 4];
        for (m, row) in self.reg_weight.chunks_exact(self.num_features).enumerate() {
            d[m] = dot(row, x) + self.reg_bias[m];
        }
        Delta::from(d)
    }

    /// Accumulate parameter gradients for one sample into `grad`.
    pub fn backward(&self, x: &[f64], grad_logits: &[f64], grad_delta: &Delta, grad: &mut DetectorHead) {
        let f = self.num_features;
        for (k, &g) in grad_logits.iter().enumerate() {
            if g != 0.0 {
                axpy(g, x, &mut grad.cls_weight[k * f..(k + 1) * f]);
                grad.cls_bias[k] += g;
            }
        }
        for (m, g) in grad_delta.to_array().into_iter().enumerate() {
            if g != 0.0 {
                axpy(g, x, &mut grad.reg_weight[m * f..(m + 1) * f]);
                grad.reg_bias[m] += g;
            }
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.cls_weight
            .iter()
            .chain(&self.cls_bias)
            .chain(&self.reg_weight)
            .chain(&self.reg_bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.cls_weight
            .iter_mut()
            .chain(self.cls_bias.iter_mut())
            .chain(self.reg_weight.iter_mut())
            .chain(self.reg_bias.iter_mut())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.params().map(|p| p * p).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    pub fn scale(&mut self, s: f64) {
        self.params_mut().for_each(|p| *p *= s);
    }

    /// `self -= lr * grad`.
    pub fn step(&mut self, grad: &DetectorHead, lr: f64) {
        for (p, g) in self.params_mut().zip(grad.params()) {
            *p -= lr * g;
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().count()
    }

    pub fn get(&self, i: usize) -> f64 {
        *self.params().nth(i).expect("parameter index in range")
    }

    pub fn set(&mut self, i: usize, v: f64) {
        *self.params_mut().nth(i).expect("parameter index in range") = v;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
