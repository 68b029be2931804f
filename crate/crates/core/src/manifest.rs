//! Run manifests and content hashing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::write_atomic;
use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::schedule::PhaseSchedule;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Git-style blob hash (`"blob <len>\0" ++ content`), with SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(content_hash(&std::fs::read(path)?))
}

/// Hash of the canonical JSON form of a resolved configuration.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let v = serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?;
    // serde_json maps are ordered, so this rendering is canonical
    Ok(sha256_hex(v.to_string().as_bytes()))
}

/// Everything needed to repeat an artifact-producing command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command_line: Vec<String>,
    pub subcommand: String,
    /// Fully resolved arguments; `rerun` replays from this.
    pub invocation: serde_json::Value,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Input path to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path to content hash.
    pub artifacts: BTreeMap<String, String>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<PhaseSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nfe: Option<usize>,
}

impl RunManifest {
    pub fn new(subcommand: &str, command_line: Vec<String>, invocation: serde_json::Value) -> Result<Self> {
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line,
            subcommand: subcommand.to_string(),
            config_hash: config_hash(&invocation)?,
            invocation,
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            metrics: BTreeMap::new(),
            schedule: None,
            nfe: None,
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn add_artifact(&mut self, path: &Path) -> Result<()> {
        self.artifacts.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Reference numbers measured on a trained teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineManifest {
    pub teacher_hash: String,
    pub dataset: DatasetKind,
    pub seeds: Vec<u64>,
    /// Energy distance of 50-step teacher samples to fresh data draws, per seed.
    pub teacher_energy_distance: Vec<f64>,
    /// Upper bound a trained teacher's energy distance must stay under.
    pub teacher_energy_distance_bound: f64,
    /// Bare-base endpoint MSE per schedule id, per seed. A student that
    /// helps must land below these.
    pub endpoint_mse_bounds: BTreeMap<String, Vec<f64>>,
    /// Best-of-repeats sampling wall time per NFE.
    pub wall_time_s: BTreeMap<String, f64>,
    pub wall_time_ratio_10_over_50: f64,
    /// Wall time of one 60-step, one-sample expert distillation.
    pub distill_time_s: f64,
    pub distill_time_bound_s: f64,
}

impl BaselineManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}
