use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hbdm::train::TrainConfig;
use hbdm::{GraphStats, LoadReport};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Deterministic run id: a prefix of the hash of everything that determines
/// the run's outputs.
pub fn run_id(parts: &[&str]) -> String {
    sha256_hex(parts.join("\u{0}").as_bytes())[..16].to_string()
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

/// Output directory that records every file written through it.
pub struct OutputDir {
    root: PathBuf,
    pub entries: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let bytes = bytes.as_ref();
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(OutputEntry {
            path: rel.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputInfo {
    pub path: String,
    pub sha256: String,
    pub mode: String,
    pub giant_component: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub software_version: String,
    pub status: String,
    pub seed: u64,
    pub input: InputInfo,
    pub graph: GraphStats,
    pub load_report: LoadReport,
    pub config: TrainConfig,
    pub outputs: Vec<OutputEntry>,
    pub timings_ms: BTreeMap<String, f64>,
}
