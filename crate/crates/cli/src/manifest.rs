//! Run manifests: what a command read, what it wrote, and the hashes needed
//! to check a rerun reproduced it.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// `manifest_<command>.json`; one per command so reruns of one command do
/// not overwrite another's record.
pub fn manifest_name(command: &str) -> String {
    format!("manifest_{command}.json")
}

pub fn timings_name(command: &str) -> String {
    format!("timings_{command}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub crate_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub files: Vec<FileRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_record(out: &Path, path: &Path) -> Result<FileRecord> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let rel = path.strip_prefix(out).unwrap_or(path);
    Ok(FileRecord {
        path: rel.to_string_lossy().replace('\\', "/"),
        bytes: bytes.len() as u64,
        sha256: sha256_hex(&bytes),
    })
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_json: &str, files: &[PathBuf], out: &Path) -> Result<Self> {
        let mut records = files.iter().map(|p| file_record(out, p)).collect::<Result<Vec<_>>>()?;
        records.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Self {
            command: command.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config_sha256: sha256_hex(config_json.as_bytes()),
            config: serde_json::from_str(config_json)?,
            files: records,
        })
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(manifest_name(&self.command));
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Wall-clock seconds per phase; kept out of the manifest so the manifest
/// stays reproducible.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub phases: Vec<(String, f64)>,
}

impl Timings {
    pub fn record(&mut self, phase: impl Into<String>, seconds: f64) {
        self.phases.push((phase.into(), seconds));
    }

    pub fn write(&self, out: &Path, command: &str) -> Result<()> {
        let map: serde_json::Map<String, serde_json::Value> =
            self.phases.iter().map(|(k, v)| (k.clone(), serde_json::json!(v))).collect();
        std::fs::write(out.join(timings_name(command)), serde_json::to_string_pretty(&map)? + "\n")?;
        Ok(())
    }
}
