//! Run manifest: everything needed to reproduce a run's outputs.

use std::path::Path;

use anyhow::Result;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub seed_generated: bool,
    pub config_sha256: String,
    pub config: Value,
    pub inputs: Vec<InputFile>,
    pub versions: Versions,
}

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub womble_cli: &'static str,
    pub womble_core: &'static str,
    pub manifest_format: u32,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Manifest {
    /// The hash covers the resolved configuration with the seed filled in.
    pub fn new(command: &str, cfg: &RunConfig, seed: u64, seed_generated: bool) -> Result<Self> {
        let mut resolved = cfg.clone();
        resolved.seed = Some(seed);
        let config = serde_json::to_value(&resolved)?;
        let config_sha256 = sha256_hex(serde_json::to_string(&config)?.as_bytes());
        let mut inputs = Vec::new();
        for (role, path) in [
            ("data", &cfg.data),
            ("graph", &cfg.graph),
            ("edges", &cfg.edges),
            ("labels", &cfg.labels),
        ] {
            if let Some(p) = path {
                inputs.push(InputFile {
                    role: role.to_string(),
                    path: p.display().to_string(),
                    sha256: sha256_hex(&std::fs::read(p)?),
                });
            }
        }
        Ok(Self {
            command: command.to_string(),
            seed,
            seed_generated,
            config_sha256,
            config,
            inputs,
            versions: Versions {
                womble_cli: env!("CARGO_PKG_VERSION"),
                womble_core: womble_core::VERSION,
                manifest_format: 1,
            },
        })
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(InputFile {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_hex(&std::fs::read(path)?),
        });
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(out_dir.join("manifest.json"), text)?;
        Ok(())
    }
}
