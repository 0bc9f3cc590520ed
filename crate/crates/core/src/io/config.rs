use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::MdConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::spectra::SpectraConfig;
use crate::train::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Predict,
    Md,
    Spectra,
    Selftest,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled extended-XYZ file.
    pub path: Option<PathBuf>,
    /// Defaults to everything not used for validation.
    pub train_size: Option<usize>,
    pub val_size: usize,
}

/// Everything a command reads. Relative paths resolve against the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub md: MdConfig,
    pub spectra: SpectraConfig,
    /// Model checkpoint read by eval, predict and md.
    pub checkpoint: Option<PathBuf>,
    /// Structures for predict and md, or the trajectory sidecar for spectra.
    pub input: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.data.path, &mut config.checkpoint, &mut config.input]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    /// Checks the sections and paths `command` uses.
    pub fn validate_for(&self, command: Command) -> Result<()> {
        let need = |p: &Option<PathBuf>, what: &str| match p {
            Some(_) => Ok(()),
            None => Err(Error::Config(format!("`{what}` is required for this command"))),
        };
        match command {
            Command::Train => {
                self.model.validate()?;
                self.train.validate()?;
                need(&self.data.path, "data.path")?;
                if self.data.val_size == 0 {
                    return Err(Error::Config("data.val_size must be positive".into()));
                }
                if self.data.train_size == Some(0) {
                    return Err(Error::Config("data.train_size must be positive".into()));
                }
            }
            Command::Eval => {
                need(&self.checkpoint, "checkpoint")?;
                need(&self.data.path, "data.path")?;
            }
            Command::Predict => {
                need(&self.checkpoint, "checkpoint")?;
                need(&self.input, "input")?;
            }
            Command::Md => {
                need(&self.checkpoint, "checkpoint")?;
                need(&self.input, "input")?;
                self.md.validate()?;
            }
            Command::Spectra => {
                need(&self.input, "input")?;
                self.spectra.validate()?;
            }
            Command::Selftest => self.model.validate()?,
        }
        Ok(())
    }
}
