//! On-disk formats: JSON Lines for the ground-truth/detection interchange,
//! CSV tables, and the row types written by each subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pisa_core::eval::{EvalReport, ImageRecord};
use pisa_core::hlr::HlrResult;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| CliError::format(path, format!("line {}: {e}", n + 1))))
        .collect()
}

pub fn jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in items {
        out.extend(serde_json::to_vec(it).expect("in-memory values always serialize"));
        out.push(b'\n');
    }
    out
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::format("<csv>", e))?;
    }
    w.into_inner().map_err(|e| CliError::format("<csv>", e))
}

/// A table whose header is only known at run time.
pub fn csv_table(header: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::format("<csv>", e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::format("<csv>", e))?;
    }
    w.into_inner().map_err(|e| CliError::format("<csv>", e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::format(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::format(path, e))
}

/// Join ground truths and detections by image id. Images present in only
/// one file keep an empty list for the other side.
pub fn merge_records(gts: Vec<ImageRecord>, dets: Vec<ImageRecord>) -> Vec<ImageRecord> {
    let mut by_id: BTreeMap<u64, ImageRecord> = BTreeMap::new();
    for r in gts {
        let e = by_id.entry(r.image_id).or_insert_with(|| ImageRecord {
            image_id: r.image_id,
            ..ImageRecord::default()
        });
        e.gts.extend(r.gts);
    }
    for r in dets {
        let e = by_id.entry(r.image_id).or_insert_with(|| ImageRecord {
            image_id: r.image_id,
            ..ImageRecord::default()
        });
        e.dets.extend(r.dets);
    }
    by_id.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub sample_id: usize,
    pub group_id: usize,
    pub local_rank: usize,
    pub hlr: usize,
    pub key: f64,
}

pub fn rank_rows(h: &HlrResult) -> Vec<RankRow> {
    h.entries
        .iter()
        .map(|e| RankRow {
            sample_id: e.sample,
            group_id: e.group_id,
            local_rank: e.local_rank,
            hlr: e.hlr,
            key: e.key,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApRow {
    pub theta: f64,
    pub ap: Option<f64>,
}

pub fn ap_rows(report: &EvalReport) -> Vec<ApRow> {
    report
        .thresholds
        .iter()
        .zip(&report.ap_by_threshold)
        .map(|(&theta, &ap)| ApRow { theta, ap })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub class_id: usize,
    pub theta: f64,
    pub rank: usize,
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

pub fn curve_rows(report: &EvalReport) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for c in &report.classes {
        for t in &c.thresholds {
            for (rank, ((&score, &precision), &recall)) in
                t.curve.scores.iter().zip(&t.curve.precision).zip(&t.curve.recall).enumerate()
            {
                rows.push(CurveRow {
                    class_id: c.class_id,
                    theta: t.theta,
                    rank,
                    score,
                    precision,
                    recall,
                });
            }
        }
    }
    rows
}

/// One threshold of the boost comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostCsvRow {
    pub theta: f64,
    pub baseline_ap: f64,
    pub top_k_ap: f64,
    pub random_k_ap: f64,
    pub top_k_delta: f64,
    pub random_k_delta: f64,
}
