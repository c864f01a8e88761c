use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, Stage};
use crate::evaluator::EvalReport;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    /// File name relative to the output directory.
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
    /// Digest taken over the report with its timing block emptied.
    #[serde(default)]
    pub timing_excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// SHA-256 of the run configuration's canonical JSON.
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<ArtifactDigest>,
    pub stage_timings: BTreeMap<String, f64>,
}

impl RunManifest {
    /// Copy with stage timings removed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        Self { stage_timings: BTreeMap::new(), ..self.clone() }
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| Stage::Manifest.fail(e))? + "\n";
        std::fs::write(&path, text).map_err(|e| Stage::Manifest.fail(format!("{}: {e}", path.display())))
    }

    pub fn read(dir: &Path) -> Result<Self, HarnessError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Stage::Manifest.fail(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Stage::Manifest.fail(e))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash<T: Serialize>(config: &T) -> Result<String, HarnessError> {
    let json = serde_json::to_vec(config).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(sha256_hex(&json))
}

/// Digest one artifact. `report.json` is hashed without its timing block so
/// identical runs produce identical digests.
pub fn digest_artifact(dir: &Path, name: &str) -> Result<ArtifactDigest, HarnessError> {
    let path = dir.join(name);
    let bytes = std::fs::read(&path).map_err(|e| Stage::Manifest.fail(format!("{}: {e}", path.display())))?;
    let (bytes, timing_excluded) = if name == "report.json" {
        let text = String::from_utf8(bytes).map_err(|e| Stage::Manifest.fail(e))?;
        let report = EvalReport::from_json(&text).map_err(|e| Stage::Manifest.fail(e))?;
        (report.canonical_json().map_err(|e| Stage::Manifest.fail(e))?.into_bytes(), true)
    } else {
        (bytes, false)
    };
    Ok(ArtifactDigest { name: name.to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64, timing_excluded })
}

/// Names of artifacts whose current digest differs from the manifest, or
/// that are missing.
pub fn verify_manifest(dir: &Path, manifest: &RunManifest) -> Vec<String> {
    manifest
        .artifacts
        .iter()
        .filter(|a| digest_artifact(dir, &a.name).map_or(true, |d| d != **a))
        .map(|a| a.name.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_answer() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn verify_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "hello").unwrap();
        let m = RunManifest {
            tool_version: "0".into(),
            config_hash: String::new(),
            seed: 1,
            artifacts: vec![digest_artifact(dir.path(), "a.txt").unwrap()],
            stage_timings: BTreeMap::new(),
        };
        assert!(verify_manifest(dir.path(), &m).is_empty());
        std::fs::write(dir.path().join("a.txt"), "hellO").unwrap();
        assert_eq!(verify_manifest(dir.path(), &m), vec!["a.txt".to_string()]);
        std::fs::remove_file(dir.path().join("a.txt")).unwrap();
        assert_eq!(verify_manifest(dir.path(), &m).len(), 1);
        m.write(dir.path()).unwrap();
        assert_eq!(RunManifest::read(dir.path()).unwrap(), m);
    }
}
