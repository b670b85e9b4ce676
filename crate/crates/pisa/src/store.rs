//! Run directories: one immutable directory per (command, key), staged
//! under a hidden name and renamed into place once its manifest is written.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const OUT_ROOT_ENV: &str = "PISA_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "runs";
pub const MANIFEST: &str = "manifest.json";
pub const TIMING: &str = "timing.json";

/// `--out` wins over the environment, which wins over the default.
pub fn out_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_ROOT),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of the canonical JSON form of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    sha256_hex(&canonical_json(value))
}

/// Compact JSON in declaration order, the form every hash is taken over.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("in-memory values always serialize")
}

pub fn pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("in-memory values always serialize");
    v.push(b'\n');
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub key: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

/// Directory name for a key and optional seed.
pub fn run_name(key: &str, seed: Option<u64>) -> String {
    let short = &key[..key.len().min(16)];
    match seed {
        Some(s) => format!("{short}-seed{s}"),
        None => short.to_string(),
    }
}

pub fn run_path(root: &Path, command: &str, key: &str, seed: Option<u64>) -> PathBuf {
    root.join(command).join(run_name(key, seed))
}

pub fn is_complete(dir: &Path) -> bool {
    dir.join(MANIFEST).is_file()
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(CliError::io(&path))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::format(&path, e))
}

static STAGING_COUNTER: AtomicUsize = AtomicUsize::new(0);

/// A run directory being filled.
pub struct RunDir {
    command: String,
    key: String,
    seed: Option<u64>,
    target: PathBuf,
    staging: PathBuf,
    files: Vec<FileEntry>,
}

/// Outcome of [`RunDir::begin`].
pub enum Begin {
    /// A finished directory with this key already exists.
    Done(PathBuf),
    Fresh(RunDir),
}

impl RunDir {
    pub fn begin(root: &Path, command: &str, key: &str, seed: Option<u64>) -> CliResult<Begin> {
        let target = run_path(root, command, key, seed);
        if is_complete(&target) {
            return Ok(Begin::Done(target));
        }
        let parent = target.parent().expect("run paths have a parent");
        fs::create_dir_all(parent).map_err(CliError::io(parent))?;
        let staging = parent.join(format!(
            ".{}.partial-{}-{}",
            run_name(key, seed),
            std::process::id(),
            STAGING_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::create_dir_all(&staging).map_err(CliError::io(&staging))?;
        Ok(Begin::Fresh(RunDir {
            command: command.to_string(),
            key: key.to_string(),
            seed,
            target,
            staging,
            files: Vec::new(),
        }))
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.staging.join(name);
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write(name, &pretty_json(value))
    }

    /// Write the timing file and manifest, then move the directory into place.
    /// The manifest lists only deterministic outputs, so timing is left out.
    /// Losing a race to an identical run keeps the existing directory.
    pub fn finish(mut self, wall: Duration) -> CliResult<PathBuf> {
        let timing = self.staging.join(TIMING);
        let bytes = pretty_json(&Timing {
            wall_seconds: wall.as_secs_f64(),
        });
        fs::write(&timing, bytes).map_err(CliError::io(&timing))?;
        let manifest = Manifest {
            command: self.command.clone(),
            key: self.key.clone(),
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            files: std::mem::take(&mut self.files),
        };
        let path = self.staging.join(MANIFEST);
        fs::write(&path, pretty_json(&manifest)).map_err(CliError::io(&path))?;
        match fs::rename(&self.staging, &self.target) {
            Ok(()) => Ok(self.target.clone()),
            Err(_) if is_complete(&self.target) => {
                let _ = fs::remove_dir_all(&self.staging);
                Ok(self.target.clone())
            }
            Err(e) => Err(CliError::io(&self.target)(e)),
        }
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if self.staging.exists() {
            let _ = fs::remove_dir_all(&self.staging);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finished_directories_are_reused() {
        let tmp = tempfile::tempdir().unwrap();
        let Begin::Fresh(mut run) = RunDir::begin(tmp.path(), "train", "abc123", Some(1)).unwrap() else {
            panic!("fresh root must give a fresh run");
        };
        run.write("a.txt", b"hello").unwrap();
        let dir = run.finish(Duration::from_millis(5)).unwrap();
        let m = read_manifest(&dir).unwrap();
        assert_eq!(m.files.len(), 1);
        assert_eq!(m.files[0].sha256, sha256_hex(b"hello"));
        assert!(dir.join(TIMING).is_file());
        assert!(matches!(
            RunDir::begin(tmp.path(), "train", "abc123", Some(1)).unwrap(),
            Begin::Done(p) if p == dir
        ));
    }

    #[test]
    fn abandoned_runs_leave_nothing() {
        let tmp = tempfile::tempdir().unwrap();
        if let Begin::Fresh(mut run) = RunDir::begin(tmp.path(), "eval", "k", None).unwrap() {
            run.write("x", b"1").unwrap();
        }
        let left: Vec<_> = fs::read_dir(tmp.path().join("eval")).unwrap().collect();
        assert!(left.is_empty());
    }

    #[test]
    fn flag_beats_environment() {
        assert_eq!(out_root(Some(Path::new("/x"))), PathBuf::from("/x"));
    }
}
