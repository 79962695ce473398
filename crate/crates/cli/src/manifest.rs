use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use smct_core::trainer::CHECKPOINT_FORMAT;

pub const MANIFEST_FORMAT: &str = "smct-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, label: String) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Self {
            path: label,
            sha256: format!("{:x}", Sha256::digest(&bytes)),
        })
    }
}

/// Record of one run: the resolved configuration, the seed, the format
/// versions written, and digests of every input and output file. Output
/// paths are relative to the output directory.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub format: &'static str,
    pub tool_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config: BTreeMap<String, Value>,
    pub formats: BTreeMap<&'static str, &'static str>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64, config: &BTreeMap<String, Value>) -> Self {
        let formats = BTreeMap::from([("checkpoint", CHECKPOINT_FORMAT), ("manifest", MANIFEST_FORMAT)]);
        Self {
            format: MANIFEST_FORMAT,
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config: config.clone(),
            formats,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path, path.display().to_string())?);
        Ok(())
    }

    pub fn output(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.outputs.push(FileDigest::of(&dir.join(name), name.to_string())?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
