use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Run metadata written next to experiment outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: String,
    /// SHA-256 of the configuration file contents, hex encoded.
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub wloss: String,
    pub harness: String,
}

impl Manifest {
    pub fn new(experiment: &str, config_text: &str, seed: u64, notes: Vec<String>) -> Self {
        Self {
            experiment: experiment.to_string(),
            config_hash: sha256_hex(config_text.as_bytes()),
            seed,
            versions: Versions { wloss: wloss::VERSION.to_string(), harness: env!("CARGO_PKG_VERSION").to_string() },
            notes,
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("manifest.json"), text + "\n")
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
