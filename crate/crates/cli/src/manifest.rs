use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl InputDigest {
    pub fn of(path: &str, bytes: &[u8]) -> Self {
        Self { path: path.to_string(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 }
    }
}

/// Record of one invocation. Holds no wall-clock time, so identical inputs
/// and configuration give an identical manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &'static str, config: serde_json::Value) -> Self {
        Self { tool: env!("CARGO_PKG_NAME"), version: env!("CARGO_PKG_VERSION"), command, config, inputs: Vec::new(), outputs: Vec::new() }
    }

    /// Writes to `path`, or to stderr as a single line when `path` is None.
    pub fn write(&self, path: Option<&Path>) -> io::Result<()> {
        match path {
            Some(p) => {
                let mut text = serde_json::to_string_pretty(self)?;
                text.push('\n');
                fs::write(p, text)
            }
            None => {
                eprintln!("manifest: {}", serde_json::to_string(self)?);
                Ok(())
            }
        }
    }
}

/// `out.jsonl` -> `out.jsonl.manifest.json`.
pub fn sidecar(output: &Path) -> std::path::PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
