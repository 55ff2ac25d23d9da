use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// Reproducibility record written as `manifest.json` next to a command's
/// outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub flags: serde_json::Value,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects inputs and outputs for one run. Outputs are always file names
/// inside the declared output directory.
pub struct Recorder {
    out_dir: PathBuf,
    command: String,
    flags: serde_json::Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(out_dir: &Path, command: &str, flags: impl Serialize) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            command: command.to_string(),
            flags: serde_json::to_value(flags)?,
            seeds: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn seed(&mut self, seed: u64) {
        self.seeds.push(seed);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Path for an output file `name` inside the output directory.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<PathBuf> {
        let p = self.output(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.output(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let hash_all = |paths: &[PathBuf]| -> Result<Vec<FileHash>> {
            paths
                .iter()
                .map(|p| {
                    Ok(FileHash {
                        path: p.display().to_string(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect()
        };
        let manifest = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            flags: self.flags,
            seeds: self.seeds,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: hash_all(&self.inputs)?,
            outputs: hash_all(&self.outputs)?,
        };
        let p = self.out_dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(p)
    }
}
