use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;
use crate::params::Params;

pub const TOOL_VERSION: &str = concat!("pact ", env!("CARGO_PKG_VERSION"));

/// Record of one run. Holds no wall-clock figures so that replays produce
/// identical manifests for identical outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: BTreeMap<String, String>,
    pub seed: u64,
    pub artifact_paths: Vec<String>,
    pub tool_version: String,
    pub results: BTreeMap<String, Value>,
}

/// Output bookkeeping for one command run.
pub struct Run {
    pub command: String,
    pub params: Params,
    out_dir: PathBuf,
    artifacts: Vec<String>,
    results: BTreeMap<String, Value>,
}

impl Run {
    pub fn new(command: &str, params: Params) -> Result<Self, CliError> {
        let out_dir = PathBuf::from(params.text("out-dir"));
        fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::io(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Self {
            command: command.to_string(),
            params,
            out_dir,
            artifacts: Vec::new(),
            results: BTreeMap::new(),
        })
    }

    /// Path `<out-dir>/<name><suffix>`, registered as an artifact.
    pub fn artifact(&mut self, suffix: &str) -> PathBuf {
        let path = self.out_dir.join(format!("{}{suffix}", self.params.text("name")));
        self.artifacts.push(path.display().to_string());
        path
    }

    pub fn result(&mut self, key: &str, value: impl Into<Value>) {
        self.results.insert(key.to_string(), value.into());
    }

    /// Writes `<out-dir>/<name>.manifest.json` and returns its path.
    pub fn finish(self) -> Result<PathBuf, CliError> {
        let path = self
            .out_dir
            .join(format!("{}.manifest.json", self.params.text("name")));
        let manifest = RunManifest {
            command: self.command,
            seed: self.params.seed()?,
            parameters: self.params.values().clone(),
            artifact_paths: self.artifacts,
            tool_version: TOOL_VERSION.to_string(),
            results: self.results,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_text(&path, &(text + "\n"))?;
        Ok(path)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}
