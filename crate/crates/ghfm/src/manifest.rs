//! Run manifests written next to every output file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cache::hex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Build {
    pub ghfm: String,
    pub fusion_core: String,
    pub profile: String,
    pub target: String,
}

impl Build {
    pub fn current() -> Build {
        Build {
            ghfm: env!("CARGO_PKG_VERSION").to_string(),
            fusion_core: fusion_core::VERSION.to_string(),
            profile: if cfg!(debug_assertions) {
                "debug"
            } else {
                "release"
            }
            .to_string(),
            target: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// Arguments as given, enough to re-run the command.
    pub argv: Vec<String>,
    pub seeds: Vec<u64>,
    /// Resolved configuration (thread count and file paths excluded).
    pub config: Value,
    /// SHA-256 of the compact JSON form of `config`.
    pub config_hash: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub build: Build,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Hash of a configuration value; object keys are sorted by `serde_json`.
pub fn config_hash(config: &Value) -> String {
    sha256_hex(serde_json::to_string(config).unwrap_or_default().as_bytes())
}

/// `<artifact>.manifest.json`.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

impl Manifest {
    pub fn new(command: &str, argv: &[String], seeds: Vec<u64>, config: Value) -> Manifest {
        Manifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            seeds,
            config_hash: config_hash(&config),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            build: Build::current(),
        }
    }

    pub fn with_inputs(mut self, inputs: &[&Path]) -> Result<Manifest> {
        for p in inputs {
            self.inputs.push(file_digest(p)?);
        }
        Ok(self)
    }

    /// Digests `artifacts` and writes one manifest next to each of them.
    pub fn write_for(&self, artifacts: &[&Path]) -> Result<()> {
        let mut m = self.clone();
        for a in artifacts {
            m.outputs.push(file_digest(a)?);
        }
        for a in artifacts {
            let path = manifest_path(a);
            let text =
                serde_json::to_string_pretty(&m).map_err(|e| Error::Numeric(e.to_string()))?;
            fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
    }
}
