use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

/// Record of one command invocation. Everything except `timings` is a pure
/// function of the arguments, so feeding `config` back through `--config`
/// with the same `seed` and paths reproduces the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub seed: u64,
    pub map: String,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock seconds by phase.
    pub timings: BTreeMap<String, f64>,
    /// Per-step wall-clock seconds, keyed by output name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub step_timings: BTreeMap<String, Vec<f64>>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, map: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            format_version: FORMAT_VERSION,
            command: command.into(),
            seed,
            map: map.into(),
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            step_timings: BTreeMap::new(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        mapprior::io::write_atomic(path, &bytes).with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// Reads a command config. Accepts either a bare config object or a manifest,
/// in which case its `config` snapshot is used.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if value.get("format_version").is_some() {
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
    }
    serde_json::from_value(value).with_context(|| format!("invalid config {}", path.display()))
}
