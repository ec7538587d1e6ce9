//! Run manifests, content hashes and the output-directory lock.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_DIR: &str = "manifests";
pub const LOCK_FILE: &str = ".geoharvest.lock";

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let mut f = File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(format!("{:x}", h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Relative to the output directory when inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predecessor {
    pub stage: String,
    pub manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub status: StageStatus,
    #[serde(default)]
    pub error: Option<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub predecessor: Option<Predecessor>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    #[serde(default)]
    pub notes: Vec<String>,
    pub started_at: DateTime<Utc>,
    pub duration_s: f64,
}

pub fn manifest_path(out: &Path, stage: &str) -> PathBuf {
    out.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

pub fn read_manifest(out: &Path, stage: &str) -> Result<RunManifest, CliError> {
    let p = manifest_path(out, stage);
    let text = fs::read_to_string(&p).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
}

/// Files read and written by one stage, hashed when the stage ends.
#[derive(Debug, Default)]
pub struct StageIo {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub notes: Vec<String>,
}

impl StageIo {
    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    pub fn note(&mut self, n: impl Into<String>) {
        let n = n.into();
        log::info!("{n}");
        self.notes.push(n);
    }
}

/// Hash each file that exists; missing files are skipped so a failed
/// stage still records what it left behind.
pub fn hash_files(out: &Path, files: &[PathBuf]) -> Vec<FileHash> {
    files
        .iter()
        .filter_map(|p| {
            let sha256 = sha256_file(p).ok()?;
            let path = p.strip_prefix(out).unwrap_or(p).to_string_lossy().replace('\\', "/");
            Some(FileHash { path, sha256 })
        })
        .collect()
}

pub fn write_manifest(out: &Path, m: &RunManifest) -> Result<(), CliError> {
    let p = manifest_path(out, &m.stage);
    fs::create_dir_all(p.parent().expect("manifest dir")).map_err(|e| CliError::io(&p, e))?;
    let mut text = serde_json::to_string_pretty(m).expect("manifest serializes");
    text.push('\n');
    fs::write(&p, text).map_err(|e| CliError::io(&p, e))
}

/// Check every manifest in `out` against its predecessor: the predecessor
/// manifest hash must match, and every input that the predecessor wrote
/// must carry the hash the predecessor recorded. Returns the stages checked.
pub fn verify_chain(out: &Path) -> Result<Vec<String>, String> {
    let dir = out.join(MANIFEST_DIR);
    let mut stages: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".json").map(String::from))
        .collect();
    stages.sort();
    for stage in &stages {
        let m = read_manifest(out, stage).map_err(|e| e.to_string())?;
        if m.status != StageStatus::Ok {
            return Err(format!("{stage}: status {:?}", m.status));
        }
        for f in &m.outputs {
            let actual = sha256_file(&out.join(&f.path)).map_err(|e| format!("{stage}: {}: {e}", f.path))?;
            if actual != f.sha256 {
                return Err(format!("{stage}: output {} changed since the run", f.path));
            }
        }
        let Some(pred) = &m.predecessor else { continue };
        let pm_path = manifest_path(out, &pred.stage);
        let actual = sha256_file(&pm_path).map_err(|e| format!("{stage}: predecessor {}: {e}", pred.stage))?;
        if actual != pred.manifest_sha256 {
            return Err(format!("{stage}: predecessor manifest {} does not match", pred.stage));
        }
        let pm = read_manifest(out, &pred.stage).map_err(|e| e.to_string())?;
        for input in &m.inputs {
            if let Some(o) = pm.outputs.iter().find(|o| o.path == input.path) {
                if o.sha256 != input.sha256 {
                    return Err(format!("{stage}: input {} differs from what {} wrote", input.path, pred.stage));
                }
            }
        }
    }
    Ok(stages)
}

/// Advisory lock on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(out: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        let path = out.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Validation(format!(
                "output directory {} is in use by another run (delete {} if that run is gone)",
                out.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
