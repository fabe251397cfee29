//! Per-command run manifest: what was read, what was written, with digests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tensor_dti::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    /// SHA-256 of the resolved settings as compact JSON.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    pub wall_time_s: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Tracks one command's inputs and outputs. Artifacts may not overwrite
/// an input.
#[derive(Debug)]
pub struct Run {
    command: String,
    args: Vec<String>,
    started: Instant,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    pub config: serde_json::Value,
}

impl Run {
    pub fn new(command: &str, args: Vec<String>, out: &Path) -> Self {
        Self {
            command: command.into(),
            args,
            started: Instant::now(),
            out: out.to_path_buf(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
            seeds: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    /// Records a file about to be read; it must exist.
    pub fn input(&mut self, path: &Path) -> Result<PathBuf> {
        if !path.is_file() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("cannot read '{}'", path.display()),
            )));
        }
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
        Ok(path.to_path_buf())
    }

    /// Reserves `out/<name>`, creating the output directory.
    pub fn artifact(&mut self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join(name);
        self.guard(&path)?;
        self.artifacts.push(path.clone());
        Ok(path)
    }

    /// Registers a file already written under the output directory.
    pub fn written(&mut self, path: &Path) -> Result<()> {
        self.guard(path)?;
        self.artifacts.push(path.to_path_buf());
        Ok(())
    }

    fn guard(&self, path: &Path) -> Result<()> {
        let target = canonical(path);
        if self.inputs.iter().any(|i| canonical(i) == target) {
            return Err(Error::Usage(format!(
                "output '{}' would overwrite an input",
                path.display()
            )));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<RunManifest> {
        let digest = |paths: &[PathBuf]| -> Result<Vec<FileDigest>> {
            paths
                .iter()
                .map(|p| {
                    Ok(FileDigest {
                        path: p.clone(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let manifest = RunManifest {
            command: self.command,
            args: self.args,
            config_hash: sha256_bytes(serde_json::to_string(&self.config)?.as_bytes()),
            config: self.config,
            seeds: self.seeds,
            inputs: digest(&self.inputs)?,
            artifacts: digest(&self.artifacts)?,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        std::fs::create_dir_all(&self.out)?;
        std::fs::write(self.out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

/// Canonical path of an existing file, or of its parent joined with the
/// file name when it does not exist yet.
fn canonical(path: &Path) -> PathBuf {
    if let Ok(p) = path.canonicalize() {
        return p;
    }
    match (path.parent(), path.file_name()) {
        (Some(parent), Some(name)) => parent
            .canonicalize()
            .map(|p| p.join(name))
            .unwrap_or_else(|_| path.to_path_buf()),
        _ => path.to_path_buf(),
    }
}
