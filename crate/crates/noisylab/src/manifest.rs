//! Run manifests and atomic file output.
//!
//! Every CLI command writes a TOML manifest next to its outputs recording
//! the tool version, the command line, the resolved configuration, the
//! master seed, and SHA-256 checksums of inputs and outputs — enough to
//! replay the run and verify its artifacts.

use crate::error::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Provenance record written alongside outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    /// Resolved configuration, rendered as TOML.
    pub config: String,
    pub created_unix: u64,
    #[serde(default)]
    pub inputs: Vec<FileChecksum>,
    #[serde(default)]
    pub outputs: Vec<FileChecksum>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileChecksum {
    pub path: String,
    pub sha256: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, master_seed: u64, config: impl Into<String>) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            master_seed,
            config: config.into(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(checksum_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(checksum_file(path)?);
        Ok(())
    }

    /// Write `<stem>.manifest.toml` next to the given output path.
    pub fn write_beside(&self, output: &Path) -> Result<()> {
        let name = output
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "out".to_string());
        let path = output.with_file_name(format!("{name}.manifest.toml"));
        let text = toml::to_string_pretty(self)
            .map_err(|e| crate::error::Error::invalid(format!("manifest encode: {e}")))?;
        atomic_write(&path, text.as_bytes())
    }
}

/// SHA-256 of a file, hex-encoded.
pub fn checksum_file(path: &Path) -> Result<FileChecksum> {
    let bytes = std::fs::read(path)?;
    Ok(FileChecksum {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Write-temp-then-rename so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// FNV-1a hash of a canonical config rendering; stamped on report rows so
/// identical specs are recognizable across runs.
pub fn config_hash(canonical: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in canonical.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("file.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert!(!path.with_extension("tmp-write").exists());
    }

    #[test]
    fn checksums_are_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(config_hash("x"), config_hash("x"));
        assert_ne!(config_hash("x"), config_hash("y"));
    }

    #[test]
    fn manifest_round_trips_through_toml() {
        let mut m = RunManifest::new("gen-data", 7, "k = 1\n");
        m.outputs.push(FileChecksum {
            path: "data.csv".into(),
            sha256: "00".into(),
        });
        let text = toml::to_string_pretty(&m).unwrap();
        let back: RunManifest = toml::from_str(&text).unwrap();
        assert_eq!(back.master_seed, 7);
        assert_eq!(back.outputs.len(), 1);
    }
}
