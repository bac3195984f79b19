use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Describes how the contents of an output directory were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub command: String,
    /// Arguments that reproduce the run, with every path made absolute.
    pub args: Vec<String>,
    pub config_paths: Vec<PathBuf>,
    pub data_paths: Vec<PathBuf>,
    /// sha256 of each input file at the time of the run.
    pub input_hashes: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// sha256 of each artifact, keyed by file name.
    pub artifacts: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
    pub version: String,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn write(&self) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(self.output_dir.join(MANIFEST_FILE), text + "\n")
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
