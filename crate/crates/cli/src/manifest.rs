use std::path::{Path, PathBuf};

use fluidrecon_core::{Error, Result};
use serde::Serialize;

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Record of one completed command. Written last, so its presence means
/// every listed artifact was produced.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    /// Effective training configuration, when the command used one.
    pub config: Option<String>,
    pub artifacts: Vec<PathBuf>,
    pub phase_seconds: Option<[f64; 3]>,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            argv: std::env::args().collect(),
            seed: None,
            config: None,
            artifacts: Vec::new(),
            phase_seconds: None,
            summary: serde_json::Value::Null,
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        if let Some(missing) = self.artifacts.iter().find(|p| !p.exists()) {
            return Err(Error::io(
                missing,
                std::io::Error::new(std::io::ErrorKind::NotFound, "artifact missing at manifest time"),
            ));
        }
        let path = out_dir.join(RUN_MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
