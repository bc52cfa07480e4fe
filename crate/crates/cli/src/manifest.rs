//! Per-stage run manifests and their verification.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use formsmith_core::{Error, Result};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stage_seed: u64,
    /// Path -> SHA-256. Paths inside the output directory are stored
    /// relative to it.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub wall_clock_ms: u64,
}

pub fn manifest_name(stage: &str) -> String {
    format!("manifest_{stage}.json")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let io = |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    };
    let mut file = fs::File::open(path).map_err(io)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(io)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Key under which `path` is recorded: relative to `out` when inside it,
/// otherwise the path as given (callers pass absolute paths).
fn record_key(out: &Path, path: &Path) -> String {
    match path.strip_prefix(out) {
        Ok(rel) => rel.to_string_lossy().into_owned(),
        Err(_) => path.to_string_lossy().into_owned(),
    }
}

fn resolve(out: &Path, key: &str) -> PathBuf {
    let p = Path::new(key);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

/// Collects a stage's files while it runs, then writes its manifest.
pub struct StageRecorder {
    stage: String,
    out: PathBuf,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl StageRecorder {
    pub fn start(stage: &str, out: &Path) -> Self {
        StageRecorder {
            stage: stage.to_string(),
            out: out.to_path_buf(),
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Registers an output file and returns its path for writing.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn digests(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        paths
            .iter()
            .map(|p| Ok((record_key(&self.out, p), sha256_file(p)?)))
            .collect()
    }

    pub fn finish(self, config_hash: &str, seed: u64, stage_seed: u64) -> Result<RunManifest> {
        let manifest = RunManifest {
            stage: self.stage.clone(),
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            stage_seed,
            inputs: self.digests(&self.inputs)?,
            outputs: self.digests(&self.outputs)?,
            wall_clock_ms: self.started.elapsed().as_millis() as u64,
        };
        let path = self.out.join(manifest_name(&self.stage));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invalid(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::Io { path, source: e })?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum FileStatus {
    Ok,
    Mismatch,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileCheck {
    pub stage: String,
    pub path: String,
    pub status: FileStatus,
}

/// Manifests in `out`, ordered by file name.
pub fn read_manifests(out: &Path) -> Result<Vec<RunManifest>> {
    let entries = fs::read_dir(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let mut names: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("manifest_") && n.ends_with(".json"))
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let text = fs::read_to_string(&p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.clone(),
                line: e.line(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Recomputes every digest recorded in the manifests under `out`.
pub fn verify_dir(out: &Path) -> Result<Vec<FileCheck>> {
    let manifests = read_manifests(out)?;
    if manifests.is_empty() {
        return Err(Error::InsufficientData(format!("no manifests in {}", out.display())));
    }
    let mut checks = Vec::new();
    for m in &manifests {
        for (key, want) in m.inputs.iter().chain(&m.outputs) {
            let path = resolve(out, key);
            let status = match sha256_file(&path) {
                Ok(got) if &got == want => FileStatus::Ok,
                Ok(_) => FileStatus::Mismatch,
                Err(_) => FileStatus::Missing,
            };
            checks.push(FileCheck {
                stage: m.stage.clone(),
                path: key.clone(),
                status,
            });
        }
    }
    Ok(checks)
}
