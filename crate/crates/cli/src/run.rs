//! Run manifests and output plumbing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hierclass_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const OUT_ENV: &str = "HIERCLASS_OUT";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io { path: path.into(), source })
}

pub fn resolve_out_dir(explicit: Option<PathBuf>, command: &str) -> PathBuf {
    explicit.unwrap_or_else(|| {
        let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("hierclass-out"), PathBuf::from);
        root.join(command)
    })
}

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to a command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Role → input file.
    pub inputs: BTreeMap<String, FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Collects outputs in memory so that nothing touches disk until the command
/// has fully succeeded.
pub struct Run {
    command: String,
    seed: u64,
    config: serde_json::Value,
    inputs: BTreeMap<String, FileDigest>,
    outputs: Vec<(String, Vec<u8>)>,
    started_at: String,
}

impl Run {
    pub fn start(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Run { command: command.into(), seed, config, inputs: BTreeMap::new(), outputs: Vec::new(), started_at: now() }
    }

    /// Record the resolved configuration once it is known.
    pub fn configure(&mut self, seed: u64, config: serde_json::Value) {
        self.seed = seed;
        self.config = config;
    }

    pub fn input(&mut self, role: &str, path: &Path, bytes: &[u8]) {
        let d = FileDigest { path: path.display().to_string(), sha256: sha256_hex(bytes) };
        self.inputs.insert(role.into(), d);
    }

    pub fn output(&mut self, relative: impl Into<String>, bytes: Vec<u8>) {
        self.outputs.push((relative.into(), bytes));
    }

    /// Write every output, then `run-<command>.json`.
    pub fn finish(self, out_dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| Error::Io { path, source }
        };
        let mut digests = Vec::with_capacity(self.outputs.len());
        for (rel, bytes) in &self.outputs {
            let path = out_dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io(parent))?;
            }
            fs::write(&path, bytes).map_err(io(&path))?;
            digests.push(FileDigest { path: rel.clone(), sha256: sha256_hex(bytes) });
        }
        let manifest = RunManifest {
            command: self.command.clone(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: digests,
            started_at: self.started_at,
            finished_at: now(),
        };
        fs::create_dir_all(out_dir).map_err(io(out_dir))?;
        let path = out_dir.join(format!("run-{}.json", self.command));
        let text = serde_json::to_string_pretty(&manifest)? + "\n";
        fs::write(&path, text).map_err(io(&path))
    }
}
