use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the canonical JSON of every setting that affects outputs.
    pub config_hash: String,
    pub seed: u64,
    /// SHA-256 over the bytes of every input file, in argument order.
    pub input_hash: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<PathBuf>,
    pub settings: serde_json::Value,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_files(paths: &[&Path]) -> std::io::Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        // Length prefix so different splits of the same bytes hash apart.
        let bytes = std::fs::read(p)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

impl RunManifest {
    pub fn new(command: &str, settings: serde_json::Value, seed: u64, input_hash: String, started: f64) -> Self {
        let canonical = serde_json::to_vec(&settings).expect("settings serialize");
        Self {
            command: command.to_string(),
            config_hash: sha256_hex(&canonical),
            seed,
            input_hash,
            started_unix: started,
            finished_unix: now_unix(),
            outputs: Vec::new(),
            settings,
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")
    }
}
