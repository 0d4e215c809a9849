//! Run configuration: a JSON object with flat dotted keys
//! (`"train.warmup_iters": 500`), layered as defaults < file < `GSREG_SEED`
//! < command-line `--key=value` overrides.

use std::collections::BTreeMap;
use std::path::Path;

use gsreg_core::sdf::NetworkConfig;
use gsreg_core::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};
use crate::scene::SceneSpec;

pub const SEED_ENV: &str = "GSREG_SEED";
pub const THREADS_ENV: &str = "GSREG_THREADS";

/// Prefix whose keys are replaced as a unit when a layer names a new shape.
const SHAPE_PREFIX: &str = "scene.shape.";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub train: TrainConfig,
    pub network: NetworkConfig,
    /// Write intermediate checkpoints every this many iterations; 0 disables.
    pub checkpoint_every: usize,
}

pub type FlatConfig = BTreeMap<String, Value>;

pub fn flatten(value: &Value) -> FlatConfig {
    fn walk(prefix: &str, v: &Value, out: &mut FlatConfig) {
        match v {
            Value::Object(map) if !map.is_empty() => {
                for (k, child) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, child, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = FlatConfig::new();
    walk("", value, &mut out);
    out
}

pub fn unflatten(flat: &FlatConfig) -> CliResult<Value> {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for (depth, part) in parts[..parts.len() - 1].iter().enumerate() {
            let entry = node
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new()));
            node = entry.as_object_mut().ok_or_else(|| {
                CliError::Config(format!(
                    "key '{key}' conflicts with value '{}'",
                    parts[..=depth].join(".")
                ))
            })?;
        }
        let leaf = parts[parts.len() - 1];
        if node.get(leaf).is_some_and(Value::is_object) {
            return Err(CliError::Config(format!(
                "key '{key}' conflicts with nested keys below it"
            )));
        }
        node.insert(leaf.to_string(), v.clone());
    }
    Ok(Value::Object(root))
}

impl RunConfig {
    pub fn to_flat(&self) -> FlatConfig {
        flatten(&serde_json::to_value(self).expect("config serializes"))
    }

    pub fn validate(&self) -> CliResult<()> {
        let section = |name: &str, r: gsreg_core::Result<()>| {
            r.map_err(|e| CliError::Config(format!("{name}: {e}")))
        };
        section("scene", self.scene.validate())?;
        section("train", self.train.validate())?;
        section("network", self.network.validate())
    }
}

/// Parses one `--key=value` override; the value is JSON when it parses as
/// JSON and a plain string otherwise.
pub fn parse_override(arg: &str) -> Option<(String, Value)> {
    let body = arg.strip_prefix("--")?;
    let (key, raw) = body.split_once('=')?;
    if !key.contains('.') && key != "checkpoint_every" {
        return None;
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Some((key.to_string(), value))
}

fn apply_layer(merged: &mut FlatConfig, layer: &FlatConfig) {
    if layer.keys().any(|k| k.starts_with(SHAPE_PREFIX)) && layer.contains_key("scene.shape.kind") {
        merged.retain(|k, _| !k.starts_with(SHAPE_PREFIX));
    }
    for (k, v) in layer {
        merged.insert(k.clone(), v.clone());
    }
}

fn read_file_layer(path: &Path) -> CliResult<FlatConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::Config(format!(
            "{}: config must be a JSON object",
            path.display()
        )));
    }
    Ok(flatten(&value))
}

/// Resolves the effective configuration. `seed_env` is the raw value of
/// `GSREG_SEED`, which sets both the scene and the training seed.
pub fn resolve(
    file: Option<&Path>,
    seed_env: Option<&str>,
    overrides: &[(String, Value)],
) -> CliResult<RunConfig> {
    let mut merged = RunConfig::default().to_flat();
    let mut user_keys: Vec<String> = Vec::new();
    if let Some(path) = file {
        let layer = read_file_layer(path)?;
        user_keys.extend(layer.keys().cloned());
        apply_layer(&mut merged, &layer);
    }
    if let Some(raw) = seed_env {
        let seed: u64 = raw.trim().parse().map_err(|_| {
            CliError::Config(format!(
                "{SEED_ENV} must be a non-negative integer, got '{raw}'"
            ))
        })?;
        merged.insert("scene.seed".into(), seed.into());
        merged.insert("train.seed".into(), seed.into());
    }
    let layer: FlatConfig = overrides.iter().cloned().collect();
    user_keys.extend(layer.keys().cloned());
    apply_layer(&mut merged, &layer);

    let nested = unflatten(&merged)?;
    let cfg: RunConfig = serde_path_to_error::deserialize(&nested).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("field '{path}': {}", e.into_inner()))
    })?;
    let known = cfg.to_flat();
    if let Some(unknown) = user_keys.iter().find(|k| !known.contains_key(*k)) {
        return Err(CliError::Config(format!("unknown config key '{unknown}'")));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Thread cap from `GSREG_THREADS`, defaulting to the available cores.
pub fn thread_count(env: Option<&str>) -> CliResult<usize> {
    match env {
        Some(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got '{raw}'"
            ))),
        },
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}
