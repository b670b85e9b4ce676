use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use pisa::cli::{RunArgs, SweepArgs};
use pisa::formats::{read_csv, ApRow, BoostCsvRow};
use pisa::store::{hash_json, pretty_json, read_manifest, sha256_hex};
use pisa::sweep::{resolve_grid, run_sweep, sweep};
use pisa_core::assignment::GroundTruth;
use pisa_core::config::ExperimentConfig;
use pisa_core::eval::{Detection, EvalReport, ImageRecord};
use pisa_core::geometry::BBox;
use pisa_core::harness::RunRecord;
use tempfile::TempDir;

const SMALL: &str = r#"{"data": {"train_images": 12, "eval_images": 8}, "train": {"epochs": 3}}"#;

fn pisa(args: &[&str], root: &Path) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_pisa"))
        .args(args)
        .arg("--out")
        .arg(root)
        .env_remove("PISA_OUT_ROOT")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn ok_dir(args: &[&str], root: &Path) -> PathBuf {
    let (code, stdout, stderr) = pisa(args, root);
    assert_eq!(code, 0, "{args:?}: {stderr}");
    PathBuf::from(stdout.trim())
}

fn small_config(dir: &TempDir) -> String {
    let path = dir.path().join("small.json");
    fs::write(&path, SMALL).unwrap();
    path.display().to_string()
}

fn small() -> ExperimentConfig {
    serde_json::from_str(SMALL).unwrap()
}

#[test]
fn train_is_reused_and_reproducible() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(&tmp);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = ok_dir(&["train", "--config", &cfg, "--seed", "2"], &a);
    let timing = fs::read(first.join("timing.json")).unwrap();
    let again = ok_dir(&["train", "--config", &cfg, "--seed", "2"], &a);
    assert_eq!(first, again);
    assert_eq!(fs::read(again.join("timing.json")).unwrap(), timing, "reuse must not retrain");

    let other = ok_dir(&["train", "--config", &cfg, "--seed", "2"], &b);
    for file in ["record.json", "manifest.json", "ap.csv", "detections.jsonl"] {
        assert_eq!(fs::read(first.join(file)).unwrap(), fs::read(other.join(file)).unwrap(), "{file}");
    }
    let manifest = read_manifest(&first).unwrap();
    for f in &manifest.files {
        assert_eq!(sha256_hex(&fs::read(first.join(&f.name)).unwrap()), f.sha256);
    }
    assert!(first.file_name().unwrap().to_str().unwrap().ends_with("-seed2"));
}

#[test]
fn record_round_trips_and_eval_reproduces_it() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(&tmp);
    let dir = ok_dir(&["train", "--config", &cfg], tmp.path());
    let bytes = fs::read(dir.join("record.json")).unwrap();
    let record: RunRecord = serde_json::from_slice(&bytes).unwrap();
    assert!(pretty_json(&record) == bytes, "record.json must round-trip byte for byte");

    let dets = dir.join("detections.jsonl").display().to_string();
    let eval = ok_dir(&["eval", "--dets", &dets, "--gts", &dets], tmp.path());
    let report: EvalReport = serde_json::from_slice(&fs::read(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.map, record.eval.map);
    let rows: Vec<ApRow> = read_csv(&eval.join("ap.csv")).unwrap();
    assert_eq!(rows.len(), record.eval.thresholds.len());
}

#[test]
fn eval_scores_perfect_detections_one() {
    let tmp = TempDir::new().unwrap();
    let (mut gts, mut dets) = (Vec::new(), Vec::new());
    for image_id in 0..3u64 {
        let boxes: Vec<(BBox, usize)> = (0..3).map(|c| (BBox::new(10.0 * c as f64, 0.0, 10.0 * c as f64 + 8.0, 8.0), c)).collect();
        gts.push(ImageRecord {
            image_id,
            gts: boxes.iter().map(|&(bbox, class_id)| GroundTruth { bbox, class_id }).collect(),
            dets: vec![],
        });
        dets.push(ImageRecord {
            image_id,
            gts: vec![],
            dets: boxes.iter().map(|&(bbox, class_id)| Detection { bbox, class_id, score: 0.8 }).collect(),
        });
    }
    let write = |name: &str, recs: &[ImageRecord]| {
        let path = tmp.path().join(name);
        fs::write(&path, pisa::formats::jsonl_bytes(recs)).unwrap();
        path.display().to_string()
    };
    let (g, d) = (write("gts.jsonl", &gts), write("dets.jsonl", &dets));
    let out = tmp.path().join("runs");
    let dir = ok_dir(&["eval", "--dets", &d, "--gts", &g], &out);
    let report: EvalReport = serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.map, Some(1.0));
}

#[test]
fn simulate_writes_one_row_per_threshold() {
    let tmp = TempDir::new().unwrap();
    let cfg = small_config(&tmp);
    let dir = ok_dir(&["simulate", "--config", &cfg, "--k", "5", "--budget", "0.10"], tmp.path());
    let rows: Vec<BoostCsvRow> = read_csv(&dir.join("boost.csv")).unwrap();
    assert_eq!(rows.len(), small().eval.thresholds.len());
    for (r, t) in rows.iter().zip(&small().eval.thresholds) {
        assert_eq!(r.theta, *t);
        assert!((r.top_k_ap - r.baseline_ap - r.top_k_delta).abs() < 1e-12);
    }
    assert!(dir.join("boost.svg").is_file());
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("absent.json").display().to_string();
    assert_eq!(pisa(&["train", "--config", &missing], tmp.path()).0, 3);

    let unknown = tmp.path().join("unknown.json");
    fs::write(&unknown, r#"{"train": {"epochz": 3}}"#).unwrap();
    assert_eq!(pisa(&["train", "--config", unknown.to_str().unwrap()], tmp.path()).0, 2);

    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    let bad = bad.display().to_string();
    assert_eq!(pisa(&["eval", "--dets", &bad, "--gts", &bad], tmp.path()).0, 3);

    let diverging = tmp.path().join("diverging.json");
    fs::write(&diverging, r#"{"data": {"train_images": 8, "eval_images": 4}, "train": {"epochs": 2, "lr": 1e308}}"#).unwrap();
    let (code, _, stderr) = pisa(&["train", "--config", diverging.to_str().unwrap()], tmp.path());
    assert_eq!(code, 4, "{stderr}");
    assert!(!tmp.path().join("train").read_dir().unwrap().any(|e| {
        let name = e.unwrap().file_name();
        name.to_string_lossy().starts_with('.')
    }));
}

#[test]
fn config_hash_tracks_every_field() {
    let base = small();
    let mut changed = base.clone();
    changed.carl.b += 0.01;
    assert_ne!(hash_json(&base), hash_json(&changed));
    assert_eq!(hash_json(&base), hash_json(&small()));
}

#[test]
fn single_point_grid_shares_the_train_run() {
    let tmp = TempDir::new().unwrap();
    let grid = tmp.path().join("grid.json");
    fs::write(&grid, format!(r#"[{{"label": "only", "set": {SMALL}}}]"#)).unwrap();
    let root = tmp.path().join("runs");
    let cfg = small_config(&tmp);
    let trained = ok_dir(&["train", "--config", &cfg], &root);

    let args = SweepArgs {
        run: RunArgs {
            config: None,
            seed: 0,
            out: Some(root.clone()),
        },
        grid: grid.display().to_string(),
        seeds: 1,
        jobs: Some(1),
    };
    let out = sweep(&args).unwrap();
    assert_eq!((out.trained, out.reused), (0, 1));
    assert_eq!(out.rows[0].runs, vec![trained]);
}

#[test]
fn sweep_is_idempotent_and_records_failures() {
    let tmp = TempDir::new().unwrap();
    let grid = tmp.path().join("grid.json");
    fs::write(
        &grid,
        format!(
            r#"[{{"label": "fine", "set": {SMALL}}},
                {{"label": "blows-up", "set": {{"data": {{"train_images": 8, "eval_images": 4}}, "train": {{"epochs": 2, "lr": 1e308}}}}}}]"#
        ),
    )
    .unwrap();
    let rows = resolve_grid(grid.to_str().unwrap(), &ExperimentConfig::default()).unwrap();
    let root = tmp.path().join("runs");
    let first = run_sweep(&root, &rows, &[0, 1], 2).unwrap();
    assert_eq!(first.trained, 2);
    assert!(first.rows[0].error.is_none());
    assert_eq!(first.rows[0].summary.as_ref().unwrap().seeds, vec![0, 1]);
    let err = first.rows[1].error.as_deref().unwrap();
    assert!(err.contains("diverged"), "{err}");
    assert!(first.rows[1].summary.is_none());

    let summary = fs::read_to_string(first.dir.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("fine,ok,2,"));
    assert!(lines[2].starts_with("blows-up,failed,"));

    let again = run_sweep(&root, &rows, &[0, 1], 2).unwrap();
    assert_eq!((again.trained, again.reused), (0, 2));
    assert_eq!(again.rows, first.rows);
    assert_eq!(again.dir, first.dir);
}
