//! Grid runs: every (row, seed) is an ordinary train run, so finished rows
//! are found by their run directory and skipped.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use pisa_core::config::ExperimentConfig;
use pisa_core::harness::experiments::{component_grid, hyper_grid, strategy_grid, GridRow, RowSummary};
use pisa_core::harness::RunRecord;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cli::SweepArgs;
use crate::commands::{load_config, train_run};
use crate::error::{CliError, CliResult};
use crate::formats::csv_table;
use crate::store::{hash_json, out_root, Begin, RunDir};

/// A row of a grid file: a label and a partial config laid over the base.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub label: String,
    #[serde(default = "empty_object")]
    pub set: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

fn overlay(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                overlay(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// Resolve `--grid`: a built-in name or a JSON file of [`GridSpec`]s.
pub fn resolve_grid(grid: &str, base: &ExperimentConfig) -> CliResult<Vec<GridRow>> {
    match grid {
        "hyper" => return Ok(hyper_grid(base)),
        "strategy" => return Ok(strategy_grid(base)),
        "components" => return Ok(component_grid(base)),
        _ => {}
    }
    let path = Path::new(grid);
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let specs: Vec<GridSpec> =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base_value = serde_json::to_value(base).expect("configs always serialize");
    specs
        .into_iter()
        .map(|s| {
            let mut v = base_value.clone();
            overlay(&mut v, &s.set);
            let config: ExperimentConfig = serde_json::from_value(v)
                .map_err(|e| CliError::Config(format!("grid row `{}`: {e}", s.label)))?;
            config.validate()?;
            Ok(GridRow { label: s.label, config })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowOutcome {
    pub label: String,
    pub config_hash: String,
    pub runs: Vec<PathBuf>,
    pub summary: Option<RowSummary>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<RowOutcome>,
    /// Runs trained by this invocation.
    pub trained: usize,
    /// Runs found complete on disk.
    pub reused: usize,
}

#[derive(Serialize)]
struct SweepKey<'a> {
    rows: &'a [GridRow],
    seeds: &'a [u64],
}

/// Train every `(row, seed)` with up to `jobs` threads, then write the summary.
pub fn run_sweep(root: &Path, rows: &[GridRow], seeds: &[u64], jobs: usize) -> CliResult<SweepOutcome> {
    let key = hash_json(&SweepKey { rows, seeds });
    let tasks: Vec<(usize, u64)> = (0..rows.len()).flat_map(|r| seeds.iter().map(move |&s| (r, s))).collect();
    let results: Mutex<Vec<Option<CliResult<(PathBuf, RunRecord, bool)>>>> =
        Mutex::new((0..tasks.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let start = Instant::now();
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(tasks.len().max(1)) {
            scope.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(r, seed)) = tasks.get(t) else { break };
                let out = train_run(root, &rows[r].config, seed);
                results.lock().expect("worker panicked")[t] = Some(out);
            });
        }
    });
    let results = results.into_inner().expect("worker panicked");

    let (mut trained, mut reused) = (0, 0);
    let mut outcomes = Vec::with_capacity(rows.len());
    let mut per_task = tasks.iter().zip(results);
    for row in rows {
        let mut records = Vec::new();
        let mut runs = Vec::new();
        let mut error = None;
        for _ in seeds {
            let (&(_, seed), res) = per_task.next().expect("one result per task");
            match res.expect("every task ran") {
                Ok((dir, rec, fresh)) => {
                    if fresh {
                        trained += 1;
                    } else {
                        reused += 1;
                    }
                    runs.push(dir);
                    records.push(rec);
                }
                Err(e) => {
                    error.get_or_insert_with(|| format!("seed {seed}: {e}"));
                }
            }
        }
        outcomes.push(RowOutcome {
            label: row.label.clone(),
            config_hash: hash_json(&row.config),
            runs,
            summary: error.is_none().then(|| RowSummary::from_records(row.label.clone(), &records)),
            error,
        });
    }

    let dir = match RunDir::begin(root, "sweep", &key, None)? {
        Begin::Done(dir) => dir,
        Begin::Fresh(mut run) => {
            run.write("summary.csv", &summary_csv(&outcomes)?)?;
            run.write_json("summary.json", &outcomes)?;
            run.finish(start.elapsed())?
        }
    };
    Ok(SweepOutcome {
        dir,
        rows: outcomes,
        trained,
        reused,
    })
}

fn summary_csv(rows: &[RowOutcome]) -> CliResult<Vec<u8>> {
    let thresholds = rows
        .iter()
        .find_map(|r| r.summary.as_ref().map(|s| s.thresholds.clone()))
        .unwrap_or_default();
    let mut header: Vec<String> = ["label", "status", "seeds", "mean_map"].map(String::from).to_vec();
    header.extend(thresholds.iter().map(|t| format!("ap_{:.2}", t)));
    header.push("error".into());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.label.clone()];
            match &r.summary {
                Some(s) => {
                    line.push("ok".into());
                    line.push(s.seeds.len().to_string());
                    line.push(s.mean_map.to_string());
                    line.extend(s.mean_ap_by_threshold.iter().map(|a| a.to_string()));
                }
                None => {
                    line.push("failed".into());
                    line.push(r.runs.len().to_string());
                    line.push(String::new());
                    line.extend(thresholds.iter().map(|_| String::new()));
                }
            }
            line.push(r.error.clone().unwrap_or_default());
            line
        })
        .collect();
    csv_table(&header, &body)
}

pub fn sweep(args: &SweepArgs) -> CliResult<SweepOutcome> {
    let base = load_config(args.run.config.as_deref())?;
    let rows = resolve_grid(&args.grid, &base)?;
    if args.seeds == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..args.seeds).map(|i| args.run.seed + i).collect();
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    run_sweep(&out_root(args.run.out.as_deref()), &rows, &seeds, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_replaces_leaves_only() {
        let mut base = serde_json::json!({"isr": {"gamma_pos": 2.0, "beta_pos": 0.0}, "carl": {"k": 1.0}});
        overlay(&mut base, &serde_json::json!({"isr": {"beta_pos": 0.2}}));
        assert_eq!(base["isr"]["gamma_pos"], 2.0);
        assert_eq!(base["isr"]["beta_pos"], 0.2);
        assert_eq!(base["carl"]["k"], 1.0);
    }

    #[test]
    fn unknown_grid_keys_are_config_errors() {
        let tmp = tempfile::NamedTempFile::new().unwrap();
        fs::write(tmp.path(), r#"[{"label": "x", "set": {"isr": {"gamma": 1.0}}}]"#).unwrap();
        let err = resolve_grid(tmp.path().to_str().unwrap(), &ExperimentConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn builtin_hyper_grid_has_eighteen_rows() {
        assert_eq!(resolve_grid("hyper", &ExperimentConfig::default()).unwrap().len(), 18);
    }
}
