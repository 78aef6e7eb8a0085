//! Run manifests and atomic artifact IO.
//!
//! Every stage directory holds exactly one `manifest.json` recording the
//! stage name, the content hashes of the inputs it consumed, the config
//! hash, derived seeds and timestamps. Downstream stages verify the hashes
//! of the artifacts they read, so a tampered or regenerated intermediate is
//! detected instead of silently mixed in.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{PipelineError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    /// Artifact path (relative to the stage dir) -> sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    /// Upstream artifact path -> sha256 observed when it was read.
    pub inputs: BTreeMap<String, String>,
    pub derived_seeds: BTreeMap<String, u64>,
    /// Unix timestamp (seconds); informational only, not hashed.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(stage: &str, config_hash: &str) -> RunManifest {
        RunManifest {
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            outputs: BTreeMap::new(),
            inputs: BTreeMap::new(),
            derived_seeds: BTreeMap::new(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)
            .map_err(|e| PipelineError::Data(format!("manifest encode: {e}")))?;
        write_atomic(&dir.join(MANIFEST_NAME), &bytes)
    }

    pub fn load(dir: &Path) -> Result<RunManifest> {
        let path = dir.join(MANIFEST_NAME);
        let bytes = std::fs::read(&path).map_err(|_| {
            PipelineError::Data(format!(
                "missing manifest {}; run the upstream stage first",
                path.display()
            ))
        })?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Data(format!("manifest decode {}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| PipelineError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Write via a temp file in the same directory plus rename, so a crash
/// never leaves a partial artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| PipelineError::Data(format!("no parent dir for {}", path.display())))?;
    std::fs::create_dir_all(dir)?;
    let tmp: PathBuf = dir.join(format!(
        ".{}.tmp{}",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Record one produced artifact: write atomically and hash into the manifest.
pub fn emit(manifest: &mut RunManifest, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    write_atomic(&dir.join(name), bytes)?;
    manifest.outputs.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

/// Read an upstream artifact, verifying it against the producer's manifest.
pub fn read_verified(
    manifest: &mut RunManifest,
    producer: &RunManifest,
    dir: &Path,
    name: &str,
) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = std::fs::read(&path)
        .map_err(|_| PipelineError::Data(format!("missing artifact {}", path.display())))?;
    let hash = sha256_hex(&bytes);
    match producer.outputs.get(name) {
        Some(expected) if *expected == hash => {}
        Some(expected) => {
            return Err(PipelineError::StaleInput(format!(
                "{} hash {} does not match its manifest entry {}",
                path.display(),
                &hash[..12],
                &expected[..12]
            )));
        }
        None => {
            return Err(PipelineError::StaleInput(format!(
                "{} is not recorded in the {} manifest",
                path.display(),
                producer.stage
            )));
        }
    }
    manifest.inputs.insert(path.display().to_string(), hash);
    Ok(bytes)
}
