use crate::config::RunConfig;
use modcut::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const VERSION: &str = env!("MODCUT_VERSION");

/// Written next to a command's outputs. Together with the input files it
/// fixes the outputs bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    /// File name to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Run statistics worth keeping next to the outputs.
    #[serde(default)]
    pub details: BTreeMap<String, serde_json::Value>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

fn name_of(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            version: VERSION.to_string(),
            seed: cfg.seed,
            config_sha256: cfg.hash()?,
            config: cfg.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            details: BTreeMap::new(),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(name_of(path), file_sha256(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(name_of(path), file_sha256(path)?);
        Ok(())
    }

    /// Writes `manifest-<command>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(format!("manifest-{}.json", self.command));
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
