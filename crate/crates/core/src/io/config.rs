use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{parse_toml, read_text, to_toml};
use crate::error::Result;
use crate::mri::Dims;
use crate::network::NetworkConfig;
use crate::training::TrainConfig;

/// Locations used by the `train` command; relative paths resolve against
/// the working directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub train_data: PathBuf,
    pub heldout_data: PathBuf,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            train_data: "data/train".into(),
            heldout_data: "data/heldout".into(),
            checkpoint: "run/checkpoint".into(),
            log: "run/loss.csv".into(),
        }
    }
}

/// Every key has a default, unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dims: Dims,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        parse_toml(path, text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?, path)
    }

    /// Full configuration with defaults filled in.
    pub fn to_toml(&self) -> Result<String> {
        to_toml(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate(&self.dims)?;
        self.training.validate(self.dims.ny)
    }
}
