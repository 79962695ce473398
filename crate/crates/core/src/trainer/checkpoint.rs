use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptState, TrainConfig};
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const CHECKPOINT_FORMAT: &str = "smct-checkpoint/1";

/// JSON checkpoint: parameters, optimizer state, the training configuration
/// and free-form data provenance (dataset path, split, normalization).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub params: ModelParams,
    pub opt: OptState,
    pub config: TrainConfig,
    pub data: serde_json::Value,
}

impl Checkpoint {
    pub fn new(params: ModelParams, opt: OptState, config: TrainConfig, data: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            params,
            opt,
            config,
            data,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            Some(other) => {
                return Err(Error::Format(format!(
                    "unsupported checkpoint format {other:?}, expected {CHECKPOINT_FORMAT:?}"
                )))
            }
            None => return Err(Error::Format("checkpoint has no format tag".into())),
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Format(e.to_string()))?;
        ck.params.validate()?;
        ck.opt.validate(&ck.params)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
