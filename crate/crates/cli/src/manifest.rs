use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use warmstart_qp::datagen::write_atomic;

use crate::commands::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written to `<out>/manifest.json` before any result, then rewritten with the finish time.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub spec: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Everything the command resolved from spec, flags and defaults.
    pub config: serde_json::Value,
    pub tool_version: String,
    pub started_unix_s: f64,
    pub finished_unix_s: Option<f64>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn begin(
        command: &str,
        spec: Option<&Path>,
        seeds: Vec<u64>,
        out: &Path,
        config: serde_json::Value,
    ) -> Result<Self, CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            spec: spec.map(Path::to_path_buf),
            seeds,
            out: out.to_path_buf(),
            config,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_s: now(),
            finished_unix_s: None,
        };
        manifest.write()?;
        Ok(manifest)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.finished_unix_s = Some(now());
        self.write()
    }

    fn write(&self) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(CliError::runtime)?;
        text.push('\n');
        write_atomic(&self.out.join(MANIFEST_FILE), text.as_bytes()).map_err(CliError::runtime)
    }
}
