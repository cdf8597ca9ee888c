//! Run manifest written next to the artifacts of every command.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started: String,
    pub finished: String,
    /// Wall-clock figures kept out of the artifacts so those stay reproducible.
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub timings: serde_json::Value,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Collects inputs and outputs of one command invocation.
pub struct Recorder {
    command: String,
    out_dir: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    started: String,
    pub timings: serde_json::Value,
}

impl Recorder {
    pub fn new(command: &str, out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Recorder {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: now(),
            timings: serde_json::Value::Null,
        })
    }

    pub fn config(&mut self, path: &Path) {
        self.config = Some(path.to_path_buf());
        self.input(path);
    }

    pub fn input(&mut self, path: &Path) {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        fdnopt::io::write_json(&path, value)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn write_wav(&mut self, name: &str, samples: &[f64], sample_rate: u32) -> Result<PathBuf> {
        let path = self.path(name);
        fdnopt::io::write_wav(&path, samples, sample_rate)?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            args: std::env::args().collect(),
            config: self.config.map(|p| p.display().to_string()),
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            inputs: self.inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            outputs: self.outputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            started: self.started,
            finished: now(),
            timings: self.timings,
        };
        let path = self.out_dir.join("manifest.json");
        fdnopt::io::write_json(&path, &manifest)?;
        Ok(path)
    }
}
