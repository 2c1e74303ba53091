//! `runs/<name>/` layout and the manifest that makes it self-describing.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINTS: &str = "checkpoints";
pub const CURVES: &str = "curves.csv";
pub const REPORT: &str = "report.txt";
pub const EMBEDDING: &str = "embedding.csv";
pub const EXTRACTOR: &str = "extractor.json";
pub const ORACLE: &str = "oracle.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: Option<u64>,
    pub extractor: u64,
    pub oracle: u64,
    pub train: u64,
    pub eval: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub dataset_fingerprint: String,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub files: Vec<FileEntry>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct RunDir {
    pub root: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    /// Creates the directory tree and writes the opening manifest.
    pub fn open(
        config: &RunConfig,
        command: &str,
        seeds: Seeds,
        dataset_fingerprint: String,
    ) -> Result<Self, CliError> {
        let root = config.run_dir();
        let ckpt = root.join(CHECKPOINTS);
        std::fs::create_dir_all(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
        let dir = Self {
            root,
            manifest: RunManifest {
                command: command.into(),
                config: config.clone(),
                seeds,
                dataset_fingerprint,
                code_version: env!("CARGO_PKG_VERSION").into(),
                started_unix: now(),
                finished_unix: None,
                files: Vec::new(),
            },
        };
        dir.write_manifest()?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn checkpoint_path(&self, iteration: usize) -> PathBuf {
        self.root.join(CHECKPOINTS).join(format!("iter-{iteration:08}.ckpt"))
    }

    /// Checkpoint with the highest iteration, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<PathBuf>, CliError> {
        latest_checkpoint(&self.root.join(CHECKPOINTS))
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        let path = self.path(MANIFEST);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(ucgan::Error::from)?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    /// Records the finish time and an inventory of every file in the run.
    pub fn finalize(mut self) -> Result<(), CliError> {
        self.manifest.finished_unix = Some(now());
        self.manifest.files = inventory(&self.root)?;
        self.write_manifest()
    }
}

pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    found.sort();
    Ok(found.pop())
}

fn inventory(root: &Path) -> Result<Vec<FileEntry>, CliError> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).expect("under root");
            if rel == Path::new(MANIFEST) {
                continue;
            }
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            out.push(FileEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
            });
        }
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}
