//! Stage directories, content hashes and manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Resolved;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub config_sha256: String,
    pub seeds: BTreeMap<&'static str, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// One command's output directory, `<output_dir>/<command>`. Tracks what
/// the command read and wrote so the manifest can list it.
pub struct Stage<'a> {
    pub command: &'static str,
    pub dir: PathBuf,
    resolved: &'a Resolved,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> Stage<'a> {
    pub fn open(resolved: &'a Resolved, command: &'static str) -> anyhow::Result<Self> {
        let dir = resolved.config.output_dir.join(command);
        // a stage holds exactly one run's artifacts
        if dir.exists() {
            std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Stage { command, dir, resolved, inputs: Vec::new(), outputs: Vec::new() })
    }

    /// An artifact written by an earlier command.
    pub fn upstream(&self, command: &str, file: &str) -> anyhow::Result<PathBuf> {
        let path = self.resolved.config.output_dir.join(command).join(file);
        if !path.exists() {
            anyhow::bail!("{} not found; run `codemix {command}` first", path.display());
        }
        Ok(path)
    }

    pub fn read_input(&mut self, path: &Path) -> PathBuf {
        self.inputs.push(path.to_path_buf());
        path.to_path_buf()
    }

    pub fn output(&mut self, file: &str) -> PathBuf {
        let path = self.dir.join(file);
        self.outputs.push(path.clone());
        path
    }

    pub fn write(&mut self, file: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.output(file);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_json(&mut self, file: &str, value: &impl Serialize) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(file, text)
    }

    /// Hashes everything recorded and writes `manifest.json`.
    pub fn finish(self) -> anyhow::Result<PathBuf> {
        let digest = |paths: &[PathBuf], base: Option<&Path>| -> anyhow::Result<Vec<FileDigest>> {
            paths
                .iter()
                .map(|p| {
                    let bytes = std::fs::read(p).with_context(|| format!("hashing {}", p.display()))?;
                    let shown = base.and_then(|b| p.strip_prefix(b).ok()).unwrap_or(p);
                    Ok(FileDigest { path: shown.display().to_string(), sha256: sha256_hex(&bytes) })
                })
                .collect()
        };
        let manifest = Manifest {
            command: self.command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            config_sha256: sha256_hex(self.resolved.canonical.as_bytes()),
            seeds: self.resolved.config.seeds(),
            inputs: digest(&self.inputs, None)?,
            outputs: digest(&self.outputs, Some(&self.dir))?,
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
