//! Run manifests: a JSON snapshot of the command, configuration, seed, and
//! outputs, written atomically next to every artifact so a run can be
//! reproduced from the manifest alone.

use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub version: String,
    pub config: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: serde_json::Value::Null,
            outputs: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn wall_seconds(mut self, seconds: f64) -> Self {
        self.wall_seconds = seconds;
        self
    }

    /// Write `<artifact>.manifest.json` atomically (temp file + rename).
    pub fn write_next_to(&self, artifact: &Path) -> anyhow::Result<()> {
        let mut path = artifact.as_os_str().to_owned();
        path.push(".manifest.json");
        let path = PathBuf::from(path);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}
