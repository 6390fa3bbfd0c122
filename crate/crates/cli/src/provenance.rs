//! Record written beside every artifact: the resolved configuration, its
//! hash, the seed, tool versions and digests of the inputs read.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use firecast_core::dataset::hex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const FILE: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub firecast: String,
    pub raster_format: String,
    pub checkpoint_format: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            firecast: env!("CARGO_PKG_VERSION").into(),
            raster_format: "fcraster-1".into(),
            checkpoint_format: "FCCKPT01".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Input {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    /// Arguments as given, program name excluded.
    pub args: Vec<String>,
    pub config_hash: String,
    pub seed: u64,
    pub versions: Versions,
    pub inputs: Vec<Input>,
    pub config: RunConfig,
}

pub fn digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

impl Provenance {
    pub fn new(command: &str, cfg: &RunConfig, inputs: &[&Path]) -> Result<Self> {
        Ok(Self {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            versions: Versions::default(),
            inputs: inputs
                .iter()
                .map(|p| {
                    Ok(Input {
                        path: p.to_path_buf(),
                        sha256: digest(p)?,
                    })
                })
                .collect::<Result<_>>()?,
            config: cfg.clone(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
