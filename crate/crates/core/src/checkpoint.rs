//! Strict-schema JSON checkpoints.
//!
//! A checkpoint stores the model config, the training config, every named
//! parameter as shape plus flat data, and the PRNG state, under an explicit
//! format version. Loading rebuilds a model whose forward pass is bitwise
//! identical: floats survive the JSON round trip exactly, and the schema is
//! strict in both directions (missing and unexpected parameters are errors).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, QAModel};
use crate::rng::SplitMix64;
use crate::train::TrainConfig;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamRecord {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Serialized training artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    format_version: u32,
    model_config: ModelConfig,
    train_config: TrainConfig,
    params: BTreeMap<String, ParamRecord>,
    rng_state: u64,
}

impl Checkpoint {
    /// Snapshot `model` together with its training provenance.
    pub fn capture(model: &QAModel, train_config: &TrainConfig, rng_state: u64) -> Self {
        let mut params = BTreeMap::new();
        model.visit_params(&mut |name, p| {
            params.insert(
                name.to_string(),
                ParamRecord {
                    shape: p.shape.clone(),
                    data: p.data.clone(),
                },
            );
        });
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model_config: model.config.clone(),
            train_config: train_config.clone(),
            params,
            rng_state,
        }
    }

    /// Rebuild the model (plus training config and PRNG state). The stored
    /// parameter set must cover the architecture exactly.
    pub fn restore(&self) -> Result<(QAModel, TrainConfig, u64)> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Version {
                expected: CHECKPOINT_FORMAT_VERSION,
                found: self.format_version,
            });
        }
        // Construction draws from a throwaway PRNG; every value is then
        // overwritten from the stored records.
        let mut rng = SplitMix64::new(0);
        let mut model = QAModel::new(self.model_config.clone(), &mut rng)?;

        let mut expected: Vec<String> = Vec::new();
        model.visit_params(&mut |name, _| expected.push(name.to_string()));
        let unexpected: Vec<&String> = self
            .params
            .keys()
            .filter(|k| !expected.iter().any(|e| e == *k))
            .collect();
        if !unexpected.is_empty() {
            return Err(Error::Schema(format!(
                "checkpoint carries unexpected parameters: {}",
                unexpected
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }

        let mut problem: Option<Error> = None;
        model.visit_params_mut(&mut |name, p| {
            if problem.is_some() {
                return;
            }
            match self.params.get(name) {
                None => {
                    problem = Some(Error::Schema(format!("checkpoint is missing parameter {name}")));
                }
                Some(rec) if rec.shape != p.shape => {
                    problem = Some(Error::Schema(format!(
                        "parameter {name} has shape {:?} in the checkpoint, model expects {:?}",
                        rec.shape, p.shape
                    )));
                }
                Some(rec) if rec.data.len() != p.data.len() => {
                    problem = Some(Error::Schema(format!(
                        "parameter {name} has {} values in the checkpoint, model expects {}",
                        rec.data.len(),
                        p.data.len()
                    )));
                }
                Some(rec) => p.data.copy_from_slice(&rec.data),
            }
        });
        if let Some(e) = problem {
            return Err(e);
        }
        Ok((model, self.train_config.clone(), self.rng_state))
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model_config
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    /// Compact JSON plus trailing newline; byte-stable for identical inputs.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)
            .map_err(|e| Error::Schema(format!("checkpoint serialization failed: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }
}

/// Write a checkpoint for `model` to `path`.
pub fn save_checkpoint(
    model: &QAModel,
    train_config: &TrainConfig,
    rng_state: u64,
    path: &Path,
) -> Result<()> {
    let ckpt = Checkpoint::capture(model, train_config, rng_state);
    fs::write(path, ckpt.to_json()?)?;
    Ok(())
}

/// Read a checkpoint and rebuild its model, config, and PRNG state.
pub fn load_checkpoint(path: &Path) -> Result<(QAModel, TrainConfig, u64)> {
    let text = fs::read_to_string(path)?;
    Checkpoint::from_json(&text)?.restore()
}
