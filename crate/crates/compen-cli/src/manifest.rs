//! Reproducibility manifest written atomically next to each command's
//! outputs.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: serde_json::Map<String, serde_json::Value>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            args: serde_json::Map::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: 0.0,
        }
    }

    pub fn arg(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.args.insert(key.to_string(), value.into());
        self
    }

    pub fn outputs(mut self, outputs: Vec<String>) -> Self {
        self.outputs = outputs;
        self
    }

    /// Writes `run_manifest.json` into `dir` via a temp file and rename.
    pub fn finish(mut self, dir: &Path, start: Instant) -> Result<()> {
        self.duration_secs = start.elapsed().as_secs_f64();
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        let tmp = dir.join(".run_manifest.json.tmp");
        let path = dir.join("run_manifest.json");
        std::fs::write(&tmp, serde_json::to_string_pretty(&self).expect("manifest serializes"))
            .with_context(|| format!("writing {}", tmp.display()))?;
        std::fs::rename(&tmp, &path)
            .with_context(|| format!("renaming into {}", path.display()))?;
        Ok(())
    }
}
