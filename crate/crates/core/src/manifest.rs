//! Run manifests written next to CLI outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_bytes(path: impl Into<String>, bytes: &[u8]) -> Self {
        Self {
            path: path.into(),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub subcommand: String,
    /// Configuration with every default filled in.
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    /// Output file names, relative to the output directory.
    pub outputs: Vec<String>,
    pub success: bool,
    pub wall_clock_seconds: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value) -> Self {
        Self {
            schema: "1".into(),
            subcommand: subcommand.into(),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            success: false,
            wall_clock_seconds: 0.0,
        }
    }

    /// Outputs named in the manifest that are missing from `dir`.
    pub fn missing_outputs(&self, dir: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|o| !dir.join(o).is_file())
            .cloned()
            .collect()
    }
}
