//! Reproducibility record written beside every run's primary output.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tcnet::container::write_atomic;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub config: Value,
    /// SHA-256 of the canonical (key-sorted, compact) JSON of `config`.
    pub config_hash: String,
    pub seed: u64,
    pub version: &'static str,
    pub outputs: Vec<String>,
}

/// Hex SHA-256 of `config` serialised with sorted keys.
pub fn config_hash(config: &Value) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `<path>.run.json`.
pub fn record_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

/// `<path><suffix>`, e.g. `model.tcnm` → `model.tcnm.history.csv`.
pub fn sibling(primary: &Path, suffix: &str) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn write_record(command: &str, args: &impl Serialize, seed: u64, outputs: &[&Path]) -> Result<()> {
    let primary = outputs.first().context("run has no outputs")?;
    let config = serde_json::to_value(args)?;
    let record = RunRecord {
        command,
        config_hash: config_hash(&config)?,
        config,
        seed,
        version: VERSION,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = record_path(primary);
    write_atomic(&path, &serde_json::to_vec_pretty(&record)?).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}
