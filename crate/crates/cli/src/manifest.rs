use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub code_version: String,
    pub serial: bool,
    pub threads: usize,
    pub inputs: Vec<Artifact>,
    /// Outputs relative to the run directory.
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn hash_input(path: &Path) -> Result<Artifact, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(Artifact {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Output directory that records every file written into it.
pub struct RunDir {
    root: PathBuf,
    written: Vec<Artifact>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::Runtime(format!("{}: {e}", root.display())))?;
        Ok(RunDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.path(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        self.written.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let s = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.write(name, s.as_bytes())
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<(), CliError> {
        manifest.artifacts = std::mem::take(&mut self.written);
        manifest.finished_unix = unix_now();
        self.write_json(MANIFEST, &manifest)?;
        Ok(())
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest, CliError> {
    let p = dir.join(MANIFEST);
    let s = std::fs::read_to_string(&p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&s).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))
}
