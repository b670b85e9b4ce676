//! The comparison grids: sampling strategies, component toggles, and the
//! reweighting hyperparameter sweep, plus aggregation over seeds.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Strategy};
use crate::error::Result;
use crate::harness::scene::{gen_scenes, Split};
use crate::harness::train::{train, RunRecord};

/// One named configuration of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    pub config: ExperimentConfig,
}

fn row(label: impl Into<String>, config: ExperimentConfig) -> GridRow {
    GridRow {
        label: label.into(),
        config,
    }
}

/// Positive/negative strategy pairs in table order.
pub const STRATEGY_PAIRS: [(Strategy, Strategy); 7] = [
    (Strategy::R, Strategy::R),
    (Strategy::H, Strategy::R),
    (Strategy::P, Strategy::R),
    (Strategy::R, Strategy::H),
    (Strategy::R, Strategy::P),
    (Strategy::H, Strategy::H),
    (Strategy::P, Strategy::P),
];

/// ISR-P, ISR-N, CARL toggles in table order.
pub const COMPONENT_TOGGLES: [(bool, bool, bool); 7] = [
    (false, false, false),
    (true, false, false),
    (false, true, false),
    (false, false, true),
    (true, true, false),
    (true, false, true),
    (true, true, true),
];

pub fn strategy_grid(base: &ExperimentConfig) -> Vec<GridRow> {
    STRATEGY_PAIRS
        .iter()
        .map(|&(p, n)| row(alloc::format!("{}/{}", p.letter(), n.letter()), base.clone().with_strategies(p, n)))
        .collect()
}

pub fn component_grid(base: &ExperimentConfig) -> Vec<GridRow> {
    COMPONENT_TOGGLES
        .iter()
        .map(|&(p, n, c)| {
            let mut parts = Vec::new();
            for (on, name) in [(p, "isr_p"), (n, "isr_n"), (c, "carl")] {
                if on {
                    parts.push(name);
                }
            }
            let label = if parts.is_empty() { String::from("none") } else { parts.join("+") };
            row(label, base.clone().with_components(p, n, c))
        })
        .collect()
}

/// `(gamma_P, beta_P)`, `(gamma_N, beta_N)` and `(k, b)` values swept one
/// component at a time with the other two off.
pub const ISR_P_POINTS: [(f64, f64); 6] = [(0.5, 0.0), (1.0, 0.0), (2.0, 0.0), (2.0, 0.1), (2.0, 0.2), (2.0, 0.3)];
pub const ISR_N_POINTS: [(f64, f64); 6] = [(0.5, 0.0), (1.0, 0.0), (2.0, 0.0), (0.5, 0.1), (0.5, 0.2), (0.5, 0.3)];
pub const CARL_POINTS: [(f64, f64); 6] = [(0.5, 0.0), (1.0, 0.0), (2.0, 0.0), (1.0, 0.1), (1.0, 0.2), (1.0, 0.3)];

pub fn hyper_grid(base: &ExperimentConfig) -> Vec<GridRow> {
    let mut rows = Vec::with_capacity(18);
    for &(g, b) in &ISR_P_POINTS {
        let mut c = base.clone().with_components(true, false, false);
        c.isr.gamma_pos = g;
        c.isr.beta_pos = b;
        rows.push(row(alloc::format!("isr_p gamma={g} beta={b}"), c));
    }
    for &(g, b) in &ISR_N_POINTS {
        let mut c = base.clone().with_components(false, true, false);
        c.isr.gamma_neg = g;
        c.isr.beta_neg = b;
        rows.push(row(alloc::format!("isr_n gamma={g} beta={b}"), c));
    }
    for &(k, b) in &CARL_POINTS {
        let mut c = base.clone().with_components(false, false, true);
        c.carl.k = k;
        c.carl.b = b;
        rows.push(row(alloc::format!("carl k={k} b={b}"), c));
    }
    rows
}

/// Train and evaluate one configuration on the scenes of `seed`.
pub fn run_one(cfg: &ExperimentConfig, seed: u64) -> Result<RunRecord> {
    cfg.validate()?;
    let train_scenes = gen_scenes(&cfg.data, cfg.data.train_images, seed, Split::Train)?;
    let eval_scenes = gen_scenes(&cfg.data, cfg.data.eval_images, seed, Split::Eval)?;
    train(&train_scenes, &eval_scenes, cfg, seed)
}

/// Mean results of one grid row over several seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub label: String,
    pub seeds: Vec<u64>,
    pub map_per_seed: Vec<f64>,
    pub mean_map: f64,
    pub thresholds: Vec<f64>,
    pub mean_ap_by_threshold: Vec<f64>,
}

impl RowSummary {
    pub fn from_records(label: impl Into<String>, records: &[RunRecord]) -> Self {
        let thresholds = records.first().map(|r| r.eval.thresholds.clone()).unwrap_or_default();
        let n = records.len().max(1) as f64;
        let mut mean_ap = vec![0.0; thresholds.len()];
        for r in records {
            for (m, ap) in mean_ap.iter_mut().zip(&r.eval.ap_by_threshold) {
                *m += ap.unwrap_or(0.0) / n;
            }
        }
        let map_per_seed: Vec<f64> = records.iter().map(RunRecord::map).collect();
        RowSummary {
            label: label.into(),
            seeds: records.iter().map(|r| r.seed).collect(),
            mean_map: map_per_seed.iter().sum::<f64>() / n,
            map_per_seed,
            thresholds,
            mean_ap_by_threshold: mean_ap,
        }
    }

    pub fn ap_at(&self, theta: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|t| (t - theta).abs() < 1e-9)
            .map(|i| self.mean_ap_by_threshold[i])
    }
}

/// Sequentially run every row for every seed.
pub fn run_grid(rows: &[GridRow], seeds: &[u64]) -> Result<Vec<RowSummary>> {
    rows.iter()
        .map(|r| {
            let records = seeds
                .iter()
                .map(|&s| run_one(&r.config, s))
                .collect::<Result<Vec<_>>>()?;
            Ok(RowSummary::from_records(r.label.clone(), &records))
        })
        .collect()
}
