//! Per-command manifests: what went in, what came out, under which
//! configuration and seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::formats::write_json;
use crate::hash::file_sha256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Which argument the file came through (`cohort`, `model`, `out`, ...).
    pub role: String,
    /// Path relative to that argument.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

pub fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("{command}.manifest.json"))
}

/// Collects inputs and outputs while a command runs.
#[derive(Debug, Default)]
pub struct Ledger {
    inputs: BTreeMap<(String, String), String>,
    outputs: BTreeMap<String, PathBuf>,
}

fn rel_string(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

impl Ledger {
    /// Hashes `root/rel` as an input.
    pub fn input(&mut self, role: &str, root: &Path, rel: &Path) -> CliResult<()> {
        let h = file_sha256(&root.join(rel))?;
        self.inputs.insert((role.to_string(), rel_string(rel)), h);
        Ok(())
    }

    /// Input given directly as a file argument.
    pub fn input_file(&mut self, role: &str, path: &Path) -> CliResult<()> {
        let h = file_sha256(path)?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.inputs.insert((role.to_string(), name), h);
        Ok(())
    }

    /// Registers `out/rel` as an output (hashed when the manifest is written).
    pub fn output(&mut self, out: &Path, rel: impl AsRef<Path>) {
        let rel = rel.as_ref();
        self.outputs.insert(rel_string(rel), out.join(rel));
    }

    pub fn write(self, command: &str, cfg: &RunConfig, out: &Path) -> CliResult<Manifest> {
        let inputs = self
            .inputs
            .into_iter()
            .map(|((role, path), sha256)| FileRecord { role, path, sha256 })
            .collect();
        let mut outputs = Vec::new();
        for (rel, full) in self.outputs {
            outputs.push(FileRecord { role: "out".into(), path: rel, sha256: file_sha256(&full)? });
        }
        let m = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            config: cfg.clone(),
            inputs,
            outputs,
        };
        write_json(&manifest_path(out, command), &m)?;
        Ok(m)
    }
}
