//! Per-stage manifests: what ran, with which config, over which files. Every
//! artifact is reproducible from its manifest (config hash + seeds live in
//! the config snapshot).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl StageManifest {
    pub fn new(stage: &str, config_hash: &str) -> Self {
        StageManifest {
            stage: stage.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn write(&self, workdir: &Path) -> anyhow::Result<PathBuf> {
        let dir = workdir.join("manifests");
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("{}.json", self.stage));
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}
