use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::commands::{Command, Failure};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

impl InputDigest {
    pub fn of(path: &Path, contents: &[u8]) -> Self {
        let hash = Sha256::digest(contents);
        Self {
            path: path.to_path_buf(),
            bytes: contents.len() as u64,
            sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
        }
    }
}

/// Everything needed to repeat a run: the fully resolved command with all
/// defaults filled in, digests of the inputs and the tool version.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Command,
    pub tool_version: String,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::data(format!("malformed manifest {}: {e}", path.display())))
    }

    /// Fails if an input file changed since the manifest was written.
    pub fn verify_inputs(&self) -> Result<(), Failure> {
        for input in &self.inputs {
            let bytes = fs::read(&input.path).map_err(|e| {
                Failure::data(format!(
                    "cannot read recorded input {}: {e}",
                    input.path.display()
                ))
            })?;
            if InputDigest::of(&input.path, &bytes) != *input {
                return Err(Failure::data(format!(
                    "input {} differs from the recorded digest",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}
