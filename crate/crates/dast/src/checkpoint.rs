//! Model checkpoints: configuration, named weight tensors and, optionally,
//! the trainer state needed to resume.

use std::path::Path;

use dast_core::{DastConfig, DastModel, Tensor, TrainConfig, TrainState};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, json_err, Error, Result};

pub const CHECKPOINT_FORMAT: &str = "dast-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainProgress {
    pub config: TrainConfig,
    pub state: TrainState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: DastConfig,
    pub params: Vec<NamedTensor>,
    pub training: Option<TrainProgress>,
}

impl Checkpoint {
    pub fn from_model(model: &DastModel, training: Option<TrainProgress>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: model.config().clone(),
            params: model
                .params()
                .params()
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    tensor: p.value.clone(),
                })
                .collect(),
            training,
        }
    }

    /// Rebuilds the model; every parameter must be present with its shape.
    pub fn to_model(&self) -> Result<DastModel> {
        let mut model = DastModel::new(self.model.clone(), 0)?;
        model
            .params_mut()
            .load_values(self.params.iter().map(|p| (p.name.as_str(), &p.tensor)))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec(self).expect("checkpoint serialises");
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let ck: Self = serde_json::from_slice(&bytes).map_err(json_err(path))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }
}

/// Checks that a model configuration fits the windows of a dataset.
pub fn check_compatible(model: &DastConfig, window: usize, stat_rows: usize, sensors: usize) -> Result<()> {
    if model.window != window || model.stat_rows != stat_rows || model.sensor_count != sensors {
        return Err(Error::Config(format!(
            "model expects windows of {} steps + {} statistic rows over {} sensors, dataset has {window} + {stat_rows} over {sensors}",
            model.window, model.stat_rows, model.sensor_count
        )));
    }
    Ok(())
}
