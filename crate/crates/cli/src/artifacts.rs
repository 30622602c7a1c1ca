//! Output files and the run manifest.

use std::path::{Path, PathBuf};

use anyhow::Context;
use riskclear_core::formulations::ModelKind;
use riskclear_core::model::{ModelOptions, SystemCase};
use serde::{Deserialize, Serialize};

/// Pretty JSON with object keys in sorted order.
pub fn sorted_json<T: Serialize + ?Sized>(value: &T) -> anyhow::Result<String> {
    // serde_json::Value maps are BTreeMaps, so the round trip sorts keys.
    Ok(serde_json::to_string_pretty(&serde_json::to_value(value)?)?)
}

/// Files written under one output directory, in write order.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    pub fn new(dir: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub case_path: String,
    pub case_hash: String,
    pub models: Vec<ModelKind>,
    pub options: ModelOptions,
    pub tool_version: String,
    pub timestamp: String,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub results: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunManifest {
    pub fn new(command: &str, case_path: &Path, case: &SystemCase, models: Vec<ModelKind>, out: &Outputs) -> Self {
        Self {
            command: command.to_string(),
            case_path: case_path.display().to_string(),
            case_hash: case.hash(),
            models,
            options: case.options,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            outputs: out.written.iter().map(|p| p.display().to_string()).collect(),
            results: Vec::new(),
            scenarios: None,
            seed: None,
        }
    }

    /// Writes manifest.json and lists it among its own outputs.
    pub fn write(mut self, out: &mut Outputs) -> anyhow::Result<()> {
        self.outputs.push(out.dir.join("manifest.json").display().to_string());
        out.write("manifest.json", &sorted_json(&self)?)?;
        Ok(())
    }
}
