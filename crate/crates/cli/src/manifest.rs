use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Record of one run. Timestamps live here and nowhere else, so every other
/// artifact is byte-identical across reruns.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub config: RunConfig,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<PathBuf>,
    pub status: String,
}

impl Manifest {
    pub fn start(command: String, argv: Vec<String>, config: RunConfig) -> Self {
        Self {
            tool: "symfeat",
            version: env!("CARGO_PKG_VERSION"),
            command,
            argv,
            config,
            started_unix: unix_seconds(),
            finished_unix: 0,
            outputs: Vec::new(),
            status: "running".into(),
        }
    }

    /// Writes `contents` under the output directory and records the path.
    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.config.out.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    pub fn record(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn finish(mut self, status: &str) -> Result<()> {
        self.finished_unix = unix_seconds();
        self.status = status.into();
        let path = self.config.out.join("manifest.json");
        let text = serde_json::to_string_pretty(&self)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
