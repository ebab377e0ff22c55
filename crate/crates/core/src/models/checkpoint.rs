use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MfModel, Stage2Model, TrainConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelParams {
    /// Frequency ranking has no parameters; it is rebuilt from the data.
    Pif,
    Bprmf(MfModel),
    Ipsmf(MfModel),
    Fender(Box<Stage2Model>),
}

/// JSON model checkpoint: trained parameters plus the config that built them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: String,
    pub config: TrainConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}
