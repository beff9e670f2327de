//! Plot-ready outputs: CSV tables, metric JSON and run manifests.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dast_core::{EpochRecord, EvalResult};
use serde::{Deserialize, Serialize};

use crate::error::{csv_err, io_err, json_err, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = writer(path)?;
    let e = csv_err(path);
    (|| -> csv::Result<()> {
        w.write_record(["epoch", "train_loss", "test_rmse", "test_score"])?;
        for h in history {
            w.write_record([h.epoch.to_string(), h.train_loss.to_string(), opt(h.test_rmse), opt(h.test_score)])?;
        }
        w.flush()?;
        Ok(())
    })()
    .map_err(e)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub unit_id: u32,
    pub true_rul: f64,
    pub pred_rul: f64,
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut w = writer(path)?;
    let e = csv_err(path);
    (|| -> csv::Result<()> {
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    })()
    .map_err(e)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    pub score: f64,
    pub n: usize,
}

impl From<&EvalResult> for Metrics {
    fn from(r: &EvalResult) -> Self {
        Self {
            rmse: r.rmse,
            score: r.score,
            n: r.n,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(json_err(path))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(json_err(path))
}

/// Sensor file: one `(sensor, weight)` row per input column.
pub fn write_sensor_weights(path: &Path, sensor_ids: &[usize], weights: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    let e = csv_err(path);
    (|| -> csv::Result<()> {
        w.write_record(["sensor", "weight"])?;
        for (id, v) in sensor_ids.iter().zip(weights) {
            w.write_record([format!("s{id}"), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })()
    .map_err(e)
}

/// Time-step file: one row per window row. The two rows after the
/// `window` real steps are the appended mean and slope rows.
pub fn write_time_weights(path: &Path, window: usize, weights: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    let e = csv_err(path);
    (|| -> csv::Result<()> {
        w.write_record(["index", "row", "weight"])?;
        for (i, v) in weights.iter().enumerate() {
            let row = match i.checked_sub(window) {
                None => format!("t{}", i + 1),
                Some(0) => "mean".into(),
                Some(1) => "slope".into(),
                Some(n) => format!("stat{}", n + 1),
            };
            w.write_record([(i + 1).to_string(), row, v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    })()
    .map_err(e)
}

/// Record of one command invocation and everything it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub dataset_fingerprint: Option<String>,
    pub threads: usize,
    pub artifacts: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        let now = unix_now();
        Self {
            command: command.into(),
            config: serde_json::to_value(config).expect("config serialises"),
            seed: None,
            dataset_fingerprint: None,
            threads: 1,
            artifacts: Vec::new(),
            started_unix: now,
            finished_unix: now,
        }
    }

    /// Stamps the finish time and writes the manifest into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix = unix_now();
        let path = dir.join(format!("{}_manifest.json", self.command));
        write_json(&path, &self)?;
        Ok(path)
    }
}
