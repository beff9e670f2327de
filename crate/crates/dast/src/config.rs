//! Layered run configuration: built-in defaults, then an optional TOML
//! file, then command-line overrides.

use std::path::{Path, PathBuf};

use dast_core::{DastConfig, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::cmapss::Subset;
use crate::error::{io_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub subset: Subset,
    /// Window length; `None` defers to an existing cache or the subset default.
    pub window: Option<usize>,
    pub threads: usize,
    pub model: DastConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            subset: Subset::Fd001,
            window: None,
            threads: 1,
            model: DastConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub dataset: Option<PathBuf>,
    pub subset: Option<Subset>,
    pub window: Option<usize>,
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub dropout: Option<f64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let table: toml::Table = toml::from_str(text)
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        let model_window = table
            .get("model")
            .and_then(|m| m.get("window"))
            .and_then(toml::Value::as_integer);
        let mut config: Self = table
            .try_into()
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        if config.window.is_none() {
            config.window = model_window.map(|w| w as usize);
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text, path)
    }

    /// Defaults, then `file` if given, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut c = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        let o = overrides.clone();
        if o.dataset.is_some() {
            c.dataset = o.dataset;
        }
        c.subset = o.subset.unwrap_or(c.subset);
        c.window = o.window.or(c.window);
        c.model.variant = o.variant.unwrap_or(c.model.variant);
        c.train.seed = o.seed.unwrap_or(c.train.seed);
        c.train.epochs = o.epochs.unwrap_or(c.train.epochs);
        c.train.batch_size = o.batch.unwrap_or(c.train.batch_size);
        c.train.learning_rate = o.lr.unwrap_or(c.train.learning_rate);
        c.train.dropout = o.dropout.unwrap_or(c.train.dropout);
        c.threads = o.threads.unwrap_or(c.threads);
        c.model.dropout = c.train.dropout;
        if let Some(w) = c.window {
            c.model.window = w;
        }
        c.train.validate()?;
        Ok(c)
    }

    /// Window to preprocess with when no cache dictates one.
    pub fn effective_window(&self) -> usize {
        self.window.unwrap_or_else(|| self.subset.default_window())
    }

    /// Model configuration for a dataset with the given shape. A window
    /// set explicitly must agree with the dataset.
    pub fn model_for(&self, window: usize, stat_rows: usize, sensors: usize) -> Result<DastConfig> {
        if let Some(w) = self.window {
            if w != window {
                return Err(Error::Config(format!(
                    "configured window {w} does not match the dataset's window {window}"
                )));
            }
        }
        let model = DastConfig {
            window,
            stat_rows,
            sensor_count: sensors,
            ..self.model.clone()
        };
        model.validate()?;
        Ok(model)
    }

    pub fn dataset_dir(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset directory given (use --dataset or a cache file)".into()))
    }
}
