//! Provenance record written next to command outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util::write_atomic;
use crate::train::sha256_hex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command_line: Vec<String>,
    pub inputs: Vec<InputDigest>,
    /// Digest of `effective_config` serialized as compact JSON.
    pub config_digest: String,
    pub effective_config: serde_json::Value,
    pub created_at: String,
}

impl RunManifest {
    pub fn new(command_line: Vec<String>, inputs: &[&Path], effective_config: serde_json::Value) -> Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.to_path_buf(),
                    sha256: sha256_hex(&fs::read(p)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command_line,
            inputs,
            config_digest: sha256_hex(serde_json::to_string(&effective_config)?.as_bytes()),
            effective_config,
            created_at: chrono::Utc::now().to_rfc3339(),
        })
    }

    /// Recompute every digest and fail on the first mismatch.
    pub fn verify(&self) -> Result<()> {
        for input in &self.inputs {
            let now = sha256_hex(&fs::read(&input.path)?);
            if now != input.sha256 {
                return Err(Error::data(format!("{} changed since the manifest was written", input.path.display())));
            }
        }
        let cfg = sha256_hex(serde_json::to_string(&self.effective_config)?.as_bytes());
        if cfg != self.config_digest {
            return Err(Error::data("manifest configuration digest does not match its contents"));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_slice(&fs::read(path)?)?;
        m.verify()?;
        Ok(m)
    }
}
