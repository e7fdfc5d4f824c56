use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    /// Every option after defaults were applied.
    pub options: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    pub fn option(mut self, key: &str, value: impl Serialize) -> Self {
        self.options
            .insert(key.to_string(), serde_json::to_value(value).expect("plain option values serialise"));
        self
    }

    /// Writes `run_manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(RUN_MANIFEST);
        self.write_file(&path)?;
        Ok(path)
    }

    pub fn write_file(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("plain data serialises");
        fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }

    /// Sidecar manifest path for a command whose output is a single file.
    pub fn sidecar(output: &Path) -> PathBuf {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }
}
