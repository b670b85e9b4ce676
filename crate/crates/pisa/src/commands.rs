//! One function per subcommand. Each returns the run directory it wrote or
//! found already complete.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pisa_core::config::ExperimentConfig;
use pisa_core::eval::coco_map;
use pisa_core::harness::boost::{simulate_boost, BoostOutcome, BoostSelection};
use pisa_core::harness::experiments::run_one;
use pisa_core::harness::report::{scene_report, Category, Polarity, ReportConfig};
use pisa_core::harness::train::{detections_from, forward_batch, image_record, predict_scene, prepare, PreparedScene};
use pisa_core::harness::{gen_scenes, RunRecord, Split, SyntheticScene};
use pisa_core::hlr::{iou_hlr, nms_cluster, score_hlr};
use serde::Serialize;

use crate::cli::{EvalArgs, RunArgs, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::formats::{ap_rows, csv_bytes, curve_rows, jsonl_bytes, rank_rows, read_jsonl, merge_records, BoostCsvRow};
use crate::plot::{line_chart, scatter_chart, Series};
use crate::store::{hash_json, out_root, sha256_hex, Begin, RunDir};

pub const RECORD: &str = "record.json";

/// Defaults overlaid by the file at `path`, then validated.
pub fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    let cfg = match path {
        None => ExperimentConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(CliError::io(p))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn ap_chart(title: &str, series: Vec<(&str, Vec<(f64, f64)>)>) -> String {
    let s: Vec<Series> = series.into_iter().map(|(name, points)| Series { name, points }).collect();
    line_chart(title, "IoU threshold", "AP", &s)
}

/// Train (or reuse) the run for `(cfg, seed)` under `root/train`.
pub fn train_run(root: &Path, cfg: &ExperimentConfig, seed: u64) -> CliResult<(PathBuf, RunRecord, bool)> {
    let key = hash_json(cfg);
    let mut run = match RunDir::begin(root, "train", &key, Some(seed))? {
        Begin::Done(dir) => {
            let path = dir.join(RECORD);
            let bytes = fs::read(&path).map_err(CliError::io(&path))?;
            let record = serde_json::from_slice(&bytes).map_err(|e| CliError::format(&path, e))?;
            return Ok((dir, record, false));
        }
        Begin::Fresh(run) => run,
    };
    let start = Instant::now();
    let mut record = run_one(cfg, seed)?;
    // Curves are recoverable from detections.jsonl and dwarf everything else.
    record.eval = record.eval.without_curves();
    run.write_json(RECORD, &record)?;
    run.write("epochs.csv", &csv_bytes(&record.epochs)?)?;
    run.write("ap.csv", &csv_bytes(&ap_rows(&record.eval))?)?;
    let points = record
        .eval
        .thresholds
        .iter()
        .zip(&record.eval.ap_by_threshold)
        .filter_map(|(&t, ap)| ap.map(|a| (t, a)))
        .collect();
    run.write("ap.svg", ap_chart(&record.label, vec![(record.label.as_str(), points)]).as_bytes())?;

    let eval_scenes = gen_scenes(&cfg.data, cfg.data.eval_images, seed, Split::Eval)?;
    let records = eval_scenes
        .iter()
        .map(|s| {
            let pred = predict_scene(&record.head, s, cfg.model.delta_std)?;
            Ok(image_record(s, detections_from(&pred, cfg.data.num_classes, cfg)))
        })
        .collect::<pisa_core::Result<Vec<_>>>()?;
    run.write("detections.jsonl", &jsonl_bytes(&records))?;
    let dir = run.finish(start.elapsed())?;
    Ok((dir, record, true))
}

pub fn train(args: &RunArgs) -> CliResult<PathBuf> {
    let cfg = load_config(args.config.as_deref())?;
    Ok(train_run(&out_root(args.out.as_deref()), &cfg, args.seed)?.0)
}

pub fn generate(args: &RunArgs) -> CliResult<PathBuf> {
    let cfg = load_config(args.config.as_deref())?;
    let mut run = match RunDir::begin(&out_root(args.out.as_deref()), "generate", &hash_json(&cfg), Some(args.seed))? {
        Begin::Done(dir) => return Ok(dir),
        Begin::Fresh(run) => run,
    };
    let start = Instant::now();
    run.write_json("config.json", &cfg)?;
    let train = gen_scenes(&cfg.data, cfg.data.train_images, args.seed, Split::Train)?;
    let eval = gen_scenes(&cfg.data, cfg.data.eval_images, args.seed, Split::Eval)?;
    run.write("train_scenes.jsonl", &jsonl_bytes(&train))?;
    run.write("eval_scenes.jsonl", &jsonl_bytes(&eval))?;
    let gts: Vec<_> = eval.iter().map(|s| image_record(s, Vec::new())).collect();
    run.write("eval_gts.jsonl", &jsonl_bytes(&gts))?;
    run.finish(start.elapsed())
}

fn eval_scenes(cfg: &ExperimentConfig, seed: u64) -> CliResult<Vec<SyntheticScene>> {
    Ok(gen_scenes(&cfg.data, cfg.data.eval_images, seed, Split::Eval)?)
}

pub fn rank(args: &RunArgs) -> CliResult<PathBuf> {
    let cfg = load_config(args.config.as_deref())?;
    let root = out_root(args.out.as_deref());
    let mut run = match RunDir::begin(&root, "rank", &hash_json(&cfg), Some(args.seed))? {
        Begin::Done(dir) => return Ok(dir),
        Begin::Fresh(run) => run,
    };
    let start = Instant::now();
    let (_, record, _) = train_run(&root, &cfg, args.seed)?;
    let scenes = eval_scenes(&cfg, args.seed)?;
    let take = cfg.train.batch_images.min(scenes.len());
    let prepared = prepare(&scenes[..take], &cfg)?;
    let refs: Vec<&PreparedScene> = prepared.iter().collect();
    let (batch, _) = forward_batch(&record.head, &refs, cfg.model.delta_std)?;
    let pos = iou_hlr(&batch)?;
    let neg = score_hlr(&batch, &nms_cluster(&batch, cfg.isr.cluster_iou)?)?;
    run.write("rank_pos.csv", &csv_bytes(&rank_rows(&pos))?)?;
    run.write("rank_neg.csv", &csv_bytes(&rank_rows(&neg))?)?;
    run.finish(start.elapsed())
}

#[derive(Serialize)]
struct EvalKey<'a> {
    gts_sha256: String,
    dets_sha256: String,
    thresholds: &'a [f64],
}

pub fn eval(args: &EvalArgs) -> CliResult<PathBuf> {
    let cfg = load_config(args.config.as_deref())?;
    let read = |p: &Path| fs::read(p).map_err(CliError::io(p));
    let key = hash_json(&EvalKey {
        gts_sha256: sha256_hex(&read(&args.gts)?),
        dets_sha256: sha256_hex(&read(&args.dets)?),
        thresholds: &cfg.eval.thresholds,
    });
    let mut run = match RunDir::begin(&out_root(args.out.as_deref()), "eval", &key, None)? {
        Begin::Done(dir) => return Ok(dir),
        Begin::Fresh(run) => run,
    };
    let start = Instant::now();
    let gts = read_jsonl(&args.gts)?;
    let dets = read_jsonl(&args.dets)?;
    let images = merge_records(gts, dets);
    let report = coco_map(&images, &cfg.eval.thresholds)?;
    run.write_json("report.json", &report)?;
    run.write("ap.csv", &csv_bytes(&ap_rows(&report))?)?;
    run.write("curves.csv", &csv_bytes(&curve_rows(&report))?)?;
    run.finish(start.elapsed())
}

#[derive(Serialize)]
struct SimulateKey<'a> {
    config: &'a ExperimentConfig,
    k: usize,
    budget: f64,
}

#[derive(Serialize)]
struct SimulateOutcome {
    top: BoostOutcome,
    random: BoostOutcome,
}

/// Boost comparison rows for one trained head.
pub fn boost_table(top: &BoostOutcome, random: &BoostOutcome) -> Vec<BoostCsvRow> {
    top.rows
        .iter()
        .zip(&random.rows)
        .map(|(t, r)| BoostCsvRow {
            theta: t.theta,
            baseline_ap: t.baseline_ap,
            top_k_ap: t.boosted_ap,
            random_k_ap: r.boosted_ap,
            top_k_delta: t.delta_ap,
            random_k_delta: r.delta_ap,
        })
        .collect()
}

pub fn simulate(args: &SimulateArgs) -> CliResult<PathBuf> {
    let cfg = load_config(args.run.config.as_deref())?;
    let seed = args.run.seed;
    let root = out_root(args.run.out.as_deref());
    let key = hash_json(&SimulateKey {
        config: &cfg,
        k: args.k,
        budget: args.budget,
    });
    let mut run = match RunDir::begin(&root, "simulate", &key, Some(seed))? {
        Begin::Done(dir) => return Ok(dir),
        Begin::Fresh(run) => run,
    };
    let start = Instant::now();
    let (_, record, _) = train_run(&root, &cfg, seed)?;
    let scenes = eval_scenes(&cfg, seed)?;
    let top = simulate_boost(&record.head, &scenes, &cfg, args.k, args.budget, BoostSelection::TopHlr)?;
    let random = simulate_boost(&record.head, &scenes, &cfg, args.k, args.budget, BoostSelection::Random { seed })?;
    let rows = boost_table(&top, &random);
    run.write("boost.csv", &csv_bytes(&rows)?)?;
    let top_name = format!("top-{}", args.k);
    let random_name = format!("random-{}", args.k);
    let chart = line_chart(
        "AP change after boosting",
        "IoU threshold",
        "AP delta",
        &[
            Series {
                name: &top_name,
                points: rows.iter().map(|r| (r.theta, r.top_k_delta)).collect(),
            },
            Series {
                name: &random_name,
                points: rows.iter().map(|r| (r.theta, r.random_k_delta)).collect(),
            },
        ],
    );
    run.write("boost.svg", chart.as_bytes())?;
    run.write_json("outcome.json", &SimulateOutcome { top, random })?;
    run.finish(start.elapsed())
}

pub fn report(args: &RunArgs) -> CliResult<PathBuf> {
    let cfg = load_config(args.config.as_deref())?;
    let root = out_root(args.out.as_deref());
    let mut run = match RunDir::begin(&root, "report", &hash_json(&cfg), Some(args.seed))? {
        Begin::Done(dir) => return Ok(dir),
        Begin::Fresh(run) => run,
    };
    let start = Instant::now();
    let (_, record, _) = train_run(&root, &cfg, args.seed)?;
    let scenes = eval_scenes(&cfg, args.seed)?;
    let rep = scene_report(
        &record.head,
        &scenes,
        &cfg,
        &ReportConfig {
            seed: args.seed,
            ..ReportConfig::default()
        },
    )?;
    run.write("scatter.csv", &csv_bytes(&rep.scatter)?)?;
    run.write("hlr_buckets.csv", &csv_bytes(&rep.hlr_buckets)?)?;
    run.write("iou_buckets.csv", &csv_bytes(&rep.iou_buckets)?)?;

    let names = ["random", "hard", "prime"];
    let mut scatter = Vec::new();
    for polarity in [Polarity::Positive, Polarity::Negative] {
        let series: Vec<Series> = [Category::Random, Category::Hard, Category::Prime]
            .iter()
            .zip(names)
            .map(|(&cat, name)| Series {
                name,
                points: rep
                    .scatter
                    .iter()
                    .filter(|r| r.category == cat && r.polarity == polarity)
                    .map(|r| (r.iou, r.loss))
                    .collect(),
            })
            .collect();
        scatter.push(series);
    }
    run.write("scatter_pos.svg", scatter_chart("Positive samples", "IoU", "classification loss", &scatter[0]).as_bytes())?;
    run.write("scatter_neg.svg", scatter_chart("Negative samples", "IoU", "classification loss", &scatter[1]).as_bytes())?;
    let buckets = |polarity| -> Vec<(f64, f64)> {
        rep.hlr_buckets
            .iter()
            .filter(|b| b.polarity == polarity)
            .map(|b| (b.lo, b.mean_score))
            .collect()
    };
    let hlr_chart = line_chart(
        "Mean score by HLR bucket",
        "HLR",
        "mean score",
        &[
            Series {
                name: "positives",
                points: buckets(Polarity::Positive),
            },
            Series {
                name: "negatives",
                points: buckets(Polarity::Negative),
            },
        ],
    );
    run.write("hlr_scores.svg", hlr_chart.as_bytes())?;
    let iou_chart = line_chart(
        "Mean positive score by IoU",
        "IoU interval start",
        "mean score",
        &[Series {
            name: "positives",
            points: rep.iou_buckets.iter().map(|b| (b.lo, b.mean_score)).collect(),
        }],
    );
    run.write("iou_scores.svg", iou_chart.as_bytes())?;
    run.finish(start.elapsed())
}
