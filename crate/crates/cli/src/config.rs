//! Settings file. Values here are overridden by `CATBN_*` environment
//! variables, which are overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub blueprint: Option<PathBuf>,
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub models: Option<Vec<String>>,
    pub max_steps: Option<usize>,
    pub cache_dir: Option<PathBuf>,
    pub em_max_iterations: Option<usize>,
    pub em_tolerance: Option<f64>,
    pub pseudocount: Option<f64>,
    pub bind: Option<String>,
    pub session_ttl_secs: Option<u64>,
    pub session_log: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }
}
