use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nl2plan::pipeline::RunConfig;
use serde::{Deserialize, Serialize};

/// Contents of the optional TOML configuration file. Everything but the
/// two directories is the default configuration of new runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub runs_dir: PathBuf,
    /// Static files served at `/`.
    pub ui_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub run: RunConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { runs_dir: PathBuf::from("runs"), ui_dir: None, run: RunConfig::default() }
    }
}

fn has_secret(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::Table(t) => t.iter().find_map(|(k, v)| {
            if k == "api_key" || k == "key" || k.ends_with("_token") {
                Some(k.clone())
            } else {
                has_secret(v)
            }
        }),
        _ => None,
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let raw: toml::Value = toml::from_str(text)?;
        if let Some(k) = has_secret(&raw) {
            bail!("'{k}' looks like a credential; API keys are only read from the environment variable named by provider.api_key_env");
        }
        Ok(raw.try_into()?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }
}
