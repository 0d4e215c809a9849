use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::FlatConfig;
use crate::error::{CliError, CliResult};

/// Provenance record written next to every set of output artifacts. The
/// config snapshot plus the tool version reproduce the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved configuration with flat dotted keys.
    pub config: FlatConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    /// Command-specific parameters such as the extraction resolution.
    #[serde(default)]
    pub parameters: BTreeMap<String, Value>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config: FlatConfig, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            started_at: now(),
            finished_at: String::new(),
            parameters: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.into(), path.display().to_string());
    }

    pub fn output(&mut self, role: &str, path: &Path) {
        self.outputs.insert(role.into(), path.display().to_string());
    }

    pub fn finish(mut self, path: &Path) -> CliResult<()> {
        self.finished_at = now();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| CliError::output(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::corrupt(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::corrupt(path, e))
    }

    /// The `scene.shape.*` entries of the config snapshot.
    pub fn shape_keys(config: &FlatConfig) -> BTreeMap<String, Value> {
        config
            .iter()
            .filter(|(k, _)| k.starts_with("scene.shape."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}
