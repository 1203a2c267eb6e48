use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use crate::cli::Command;

pub const FILE_NAME: &str = "manifest.json";

/// Everything needed to reproduce a run: the resolved command with all
/// defaults filled in (seeds included) and the model text itself, so a rerun
/// does not depend on the model file still being around.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub run: Command,
    pub model_path: PathBuf,
    pub model_toml: String,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub outputs: Vec<String>,
    pub threads: Option<usize>,
    pub exit_code: i32,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

pub fn version() -> String {
    format!("mfc {}", env!("CARGO_PKG_VERSION"))
}
