//! Stage manifests: every command records what it read, what it wrote and
//! the run identity, making pipelines auditable and re-runnable.
//!
//! The run id is `sha256(config file bytes || master seed)`. Stages verify
//! that the manifests of the artifacts they consume carry the same run id,
//! so artifacts from different configurations cannot be silently mixed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::LoadedConfig;
use crate::CliError;

pub fn run_id(loaded: &LoadedConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(&loaded.raw_bytes);
    hasher.update(loaded.config.master_seed.to_le_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub run_id: String,
    pub master_seed: u64,
    pub stage_seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Free-form stage facts (counts, selections, dropped items).
    #[serde(default)]
    pub notes: std::collections::BTreeMap<String, String>,
}

impl StageManifest {
    pub fn new(stage: &str, loaded: &LoadedConfig, stage_seed: u64) -> Self {
        StageManifest {
            stage: stage.into(),
            run_id: run_id(loaded),
            master_seed: loaded.config.master_seed,
            stage_seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: std::collections::BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_string_lossy().into_owned());
        self
    }

    /// Outputs are recorded by file name: they always live in the stage's
    /// output directory, and name-only records keep manifests byte-identical
    /// across reruns into different directories.
    pub fn output(&mut self, path: &Path) -> &mut Self {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.to_string_lossy().into_owned());
        self.outputs.push(name);
        self
    }

    pub fn note(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.notes.insert(key.into(), value.to_string());
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("manifest serialization: {e}")))?;
        std::fs::write(path, json)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid manifest {}: {e}", path.display())))
    }

    /// Rejects stage mixing across configurations.
    pub fn verify_run_id(&self, loaded: &LoadedConfig) -> Result<(), CliError> {
        let expected = run_id(loaded);
        if self.run_id != expected {
            return Err(CliError::Config(format!(
                "config hash mismatch: stage '{}' was produced under run id {} but the current config/seed give {}",
                self.stage, self.run_id, expected
            )));
        }
        Ok(())
    }
}

pub fn manifest_path(out_dir: &Path, stage: &str) -> PathBuf {
    out_dir.join(format!("manifest_{stage}.json"))
}
