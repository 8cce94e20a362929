//! Resolved run configuration and its canonical JSON echo.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{CorridorParams, EnvRegistry};
use crate::error::{HgpoError, Result};
use crate::estimators::Estimator;
use crate::optimizer::TrainConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    #[default]
    Train,
    Compare,
}

/// Everything a `train` or `compare` run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    pub env: String,
    pub env_params: CorridorParams,
    pub out: PathBuf,
    pub train: TrainConfig,
    /// Grid axes, used by `compare` only.
    pub estimators: Vec<Estimator>,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: Command::Train,
            env: "aliased-corridor".to_string(),
            env_params: CorridorParams::default(),
            out: PathBuf::from("runs/default"),
            train: TrainConfig::default(),
            estimators: Vec::new(),
            seeds: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }

    pub fn validate(&self) -> Result<()> {
        EnvRegistry::lookup(&self.env, self.env_params)?;
        self.train.validate()?;
        if self.command == Command::Compare {
            if self.estimators.is_empty() {
                return Err(HgpoError::invalid("compare needs at least one estimator"));
            }
            if self.seeds.is_empty() {
                return Err(HgpoError::invalid("compare needs at least one seed"));
            }
        }
        Ok(())
    }

    /// Pretty JSON with keys sorted at every level, newline-terminated.
    pub fn to_canonical_json(&self) -> Result<String> {
        canonical_json(self)
    }

    pub fn write_canonical(&self, path: &Path) -> Result<()> {
        write_canonical(self, path)
    }
}

pub(crate) fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // `serde_json::Value` keeps object keys in a BTreeMap, so a round trip
    // through it sorts them.
    let value = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub(crate) fn write_canonical<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut file = File::create(path)?;
    file.write_all(canonical_json(value)?.as_bytes())?;
    Ok(())
}
