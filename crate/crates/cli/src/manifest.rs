use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use aps_core::config::ExperimentConfig;
use aps_core::metrics::MetricsRecord;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One (x, y, seed) point of a named series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
    pub seed: u64,
}

/// Record of one subcommand run, written next to its artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub config: String,
    pub seeds: Vec<u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    #[serde(default)]
    pub metrics: Vec<MetricsRecord>,
    #[serde(default)]
    pub series: Vec<SeriesRow>,
    pub complete: bool,
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_text().as_bytes()))
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash(cfg),
            config: cfg.to_text(),
            seeds: vec![cfg.seed],
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            metrics: Vec::new(),
            series: Vec::new(),
            complete: false,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.insert(name.to_string(), path.to_path_buf());
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.insert(name.to_string(), path.to_path_buf());
    }

    /// Marks the run complete and writes `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> CliResult<PathBuf> {
        self.complete = true;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).map_err(|e| CliError::Usage(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(aps_core::Error::from)?;
        Ok(path)
    }

    /// Reads a manifest file, or `manifest.json` inside a directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|_| CliError::Missing(file.display().to_string()))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", file.display())))
    }

    /// Why the run cannot be reported, if anything is missing.
    pub fn missing(&self) -> Option<String> {
        if !self.complete {
            return Some(format!("{} run did not complete", self.command));
        }
        self.outputs
            .iter()
            .find(|(_, p)| !p.exists())
            .map(|(name, p)| format!("{} output {name} missing at {}", self.command, p.display()))
    }
}
