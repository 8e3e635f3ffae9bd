//! Run manifests: a JSON record of what a training run was given, written
//! before training starts so interrupted runs stay diagnosable.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::error::{Error, Result};

const FORMAT: &str = "gentype-manifest-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub command: String,
    pub strategy: String,
    pub seed: u64,
    pub corpus_path: String,
    /// FNV-1a 64-bit digest of the corpus file, as 16 hex digits.
    pub corpus_checksum: String,
    pub config: AppConfig,
    /// Paths the run will write, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        strategy: &str,
        corpus_path: &Path,
        config: &AppConfig,
        outputs: &[&str],
    ) -> Result<RunManifest> {
        Ok(RunManifest {
            format: FORMAT.to_string(),
            command: command.to_string(),
            strategy: strategy.to_string(),
            seed: config.train.seed,
            corpus_path: corpus_path.display().to_string(),
            corpus_checksum: checksum_file(corpus_path)?,
            config: config.clone(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

pub fn checksum_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(format!("{:016x}", fnv1a64(&bytes)))
}
