//! TOML run configuration: a `[model]` table and a `[train]` table.
//!
//! ```toml
//! [model]
//! preset = "o5_regression"      # or spell out every ModelSpec field
//!
//! [train]
//! epochs = 500
//! learning_rate = 1e-3
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::ModelSpec;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: toml::Table,
    #[serde(default)]
    train: Option<TrainConfig>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text)?;
        let model = match raw.model.get("preset") {
            Some(value) => {
                if raw.model.len() != 1 {
                    return Err(Error::InvalidSpec(
                        "[model] must contain either `preset` alone or a full spec".into(),
                    ));
                }
                let name = value
                    .as_str()
                    .ok_or_else(|| Error::InvalidSpec("`preset` must be a string".into()))?;
                ModelSpec::preset(name)?
            }
            None => raw
                .model
                .try_into()
                .map_err(|e: toml::de::Error| Error::InvalidSpec(e.message().to_string()))?,
        };
        model.validate()?;
        let train = raw.train.unwrap_or_default();
        train.validate()?;
        Ok(RunConfig { model, train })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
