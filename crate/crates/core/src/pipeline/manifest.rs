//! Run manifest: stage completion records with artifact fingerprints, so
//! reruns are no-ops, missing prerequisites fail with the command to run,
//! and tampered artifacts surface as staleness errors.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::hex;
use crate::pipeline::atomic_write;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ArtifactRecord {
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageRecord {
    pub artifacts: Vec<ArtifactRecord>,
    /// Fingerprint over the config and all prerequisite artifacts; a rerun
    /// with a matching value is a no-op.
    pub input_fingerprint: String,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_fingerprint: String,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(config_fingerprint: &str) -> Self {
        RunManifest {
            tool_version: TOOL_VERSION.to_string(),
            config_fingerprint: config_fingerprint.to_string(),
            stages: BTreeMap::new(),
        }
    }

    /// Loads the manifest if present; otherwise starts a fresh one. A
    /// manifest recorded under a different config fingerprint is rejected so
    /// one run directory never mixes two configurations.
    pub fn load_or_new(run_dir: &Path, config_fingerprint: &str) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(RunManifest::new(config_fingerprint));
        }
        let manifest: RunManifest = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        if manifest.config_fingerprint != config_fingerprint {
            return Err(Error::Stale(format!(
                "run directory {} was produced by a different config; use a fresh --run-dir",
                run_dir.display()
            )));
        }
        Ok(manifest)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        atomic_write(&run_dir.join(MANIFEST_FILE), json.as_bytes())
    }

    /// Errors unless every prerequisite stage has completed; the message
    /// names the first missing command.
    pub fn require(&self, stage: &str, prerequisites: &[&str]) -> Result<()> {
        for &pre in prerequisites {
            if !self.stages.contains_key(pre) {
                return Err(Error::Dependency {
                    prerequisite: pre.to_string(),
                    detail: format!("stage `{stage}` needs its artifacts"),
                });
            }
        }
        Ok(())
    }

    /// Fingerprint of everything a stage consumes: the config plus the
    /// artifact hashes of its prerequisites, in a fixed order.
    pub fn input_fingerprint(&self, prerequisites: &[&str], extra: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(self.config_fingerprint.as_bytes());
        for &pre in prerequisites {
            h.update([0x1f]);
            h.update(pre.as_bytes());
            if let Some(record) = self.stages.get(pre) {
                for a in &record.artifacts {
                    h.update(a.path.as_bytes());
                    h.update([0x1e]);
                    h.update(a.sha256.as_bytes());
                }
            }
        }
        for &e in extra {
            h.update([0x1f]);
            h.update(e.as_bytes());
        }
        hex(&h.finalize())
    }

    /// Verifies every recorded artifact of `stage` against the filesystem.
    pub fn verify_stage(&self, run_dir: &Path, stage: &str) -> Result<()> {
        let record = self
            .stages
            .get(stage)
            .ok_or_else(|| Error::Lookup(format!("stage {stage} not in manifest")))?;
        for a in &record.artifacts {
            let path = run_dir.join(&a.path);
            if !path.exists() {
                return Err(Error::Stale(format!("artifact {} is missing", a.path)));
            }
            if file_sha256(&path)? != a.sha256 {
                return Err(Error::Stale(format!(
                    "artifact {} no longer matches its recorded fingerprint",
                    a.path
                )));
            }
        }
        Ok(())
    }

    /// Records a completed stage from the artifact paths it wrote.
    pub fn record_stage(
        &mut self,
        run_dir: &Path,
        stage: &str,
        input_fingerprint: &str,
        artifact_paths: &[PathBuf],
        wall_clock_secs: f64,
    ) -> Result<()> {
        let mut artifacts = Vec::with_capacity(artifact_paths.len());
        for path in artifact_paths {
            let rel = path
                .strip_prefix(run_dir)
                .map_err(|_| Error::Usage(format!("artifact {} outside run dir", path.display())))?;
            artifacts.push(ArtifactRecord {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: file_sha256(path)?,
            });
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord { artifacts, input_fingerprint: input_fingerprint.to_string(), wall_clock_secs },
        );
        self.save(run_dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gating_names_the_missing_command() {
        let m = RunManifest::new("fp");
        let err = m.require("probe", &["train"]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("`train`"), "{err}");
    }

    #[test]
    fn record_verify_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let run_dir = dir.path();
        let artifact = run_dir.join("corpora/demo.json");
        atomic_write(&artifact, b"{\"v\":1}").unwrap();

        let mut m = RunManifest::new("fp");
        let fp = m.input_fingerprint(&[], &["dense"]);
        m.record_stage(run_dir, "gen-data", &fp, &[artifact.clone()], 0.1).unwrap();
        m.verify_stage(run_dir, "gen-data").unwrap();
        m.require("train", &["gen-data"]).unwrap();

        // Reload sees the same record; tampering is a staleness error.
        let loaded = RunManifest::load_or_new(run_dir, "fp").unwrap();
        assert_eq!(loaded, m);
        assert!(RunManifest::load_or_new(run_dir, "other").is_err());
        std::fs::write(&artifact, b"{\"v\":2}").unwrap();
        let err = loaded.verify_stage(run_dir, "gen-data").unwrap_err();
        assert!(matches!(err, Error::Stale(_)));
    }

    #[test]
    fn input_fingerprint_tracks_prerequisite_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let run_dir = dir.path();
        let artifact = run_dir.join("a.json");
        atomic_write(&artifact, b"one").unwrap();
        let mut m = RunManifest::new("fp");
        m.record_stage(run_dir, "gen-data", "x", &[artifact.clone()], 0.0).unwrap();
        let before = m.input_fingerprint(&["gen-data"], &[]);
        atomic_write(&artifact, b"two").unwrap();
        m.record_stage(run_dir, "gen-data", "x", &[artifact], 0.0).unwrap();
        assert_ne!(before, m.input_fingerprint(&["gen-data"], &[]));
        assert_ne!(before, m.input_fingerprint(&["gen-data"], &["dense"]));
    }
}
