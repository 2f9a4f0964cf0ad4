//! Data-only artifact output with a reproducibility manifest.
//!
//! Every command writes its results into one directory: CSV tables, JSON
//! summaries, and a `manifest.json` recording the tool version, the
//! SHA-256 of the config file, the seeds, the artifact list, and the
//! outcome. The manifest carries no timestamps, so reruns with identical
//! inputs produce byte-identical directories.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Hex SHA-256 digest of a config document.
pub fn config_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in out {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

/// Run record written alongside the artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    /// Producing tool and version.
    pub tool: String,
    /// Command that ran.
    pub command: String,
    /// SHA-256 of the config file, when one was supplied.
    pub config_sha256: Option<String>,
    /// Seeds the run consumed.
    pub seeds: Vec<u64>,
    /// `ok` or `failed`.
    pub status: String,
    /// Failure reason, present exactly when status is `failed`.
    pub failure: Option<String>,
    /// Artifact file names in creation order.
    pub artifacts: Vec<String>,
}

/// Output directory handle tracking created artifacts.
#[derive(Debug)]
pub struct ArtifactDir {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl ArtifactDir {
    /// Creates (or reuses) the directory.
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ArtifactDir {
            dir,
            artifacts: Vec::new(),
        })
    }

    /// Directory path.
    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Streams a CSV (or any text) artifact through `fill`.
    pub fn write_text(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut dyn Write) -> Result<()>,
    ) -> Result<()> {
        let mut out = BufWriter::new(File::create(self.dir.join(name))?);
        fill(&mut out)?;
        out.flush()?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Writes a pretty-printed JSON artifact.
    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut out = BufWriter::new(File::create(self.dir.join(name))?);
        serde_json::to_writer_pretty(&mut out, value)
            .map_err(|e| crate::error::Error::invalid(format!("serializing {name}: {e}")))?;
        out.write_all(b"\n")?;
        out.flush()?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Writes the manifest; `failure` of `None` means success. Always the
    /// last write of a run so partial artifacts never masquerade as
    /// complete ones.
    pub fn write_manifest(
        &self,
        command: &str,
        config_sha256: Option<String>,
        seeds: &[u64],
        failure: Option<String>,
    ) -> Result<()> {
        let manifest = Manifest {
            tool: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config_sha256,
            seeds: seeds.to_vec(),
            status: if failure.is_none() { "ok" } else { "failed" }.to_string(),
            failure,
            artifacts: self.artifacts.clone(),
        };
        let mut out = BufWriter::new(File::create(self.dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut out, &manifest)
            .map_err(|e| crate::error::Error::invalid(format!("serializing manifest: {e}")))?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }
}
