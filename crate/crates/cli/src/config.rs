//! Run configuration: built-in defaults, optionally overlaid by a JSON file,
//! then by command-line flags (strongest last).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use qlsc_core::data::GenSpec;
use qlsc_core::{Error, ModelConfig, Result, TrainConfig};

/// One file configures generation, the model, and training; every field has
/// a default, so any subset may be given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gen: GenSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Defaults when `path` is `None`, otherwise defaults overlaid by the file.
pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                msg: e.to_string(),
            })
        }
    }
}

/// Echo the post-override configuration to `dir/effective_config.json` so a
/// run can be reproduced from its outputs alone.
pub fn write_effective_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Parse { line: 0, msg: e.to_string() })?;
    text.push('\n');
    fs::write(dir.join("effective_config.json"), text)?;
    Ok(())
}
