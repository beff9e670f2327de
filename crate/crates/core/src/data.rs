//! Run-to-failure series preprocessing: sensor pruning, min-max scaling,
//! capped RUL labels, sliding windows and per-window statistics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sensor channels in a raw turbofan record.
pub const RAW_SENSOR_COUNT: usize = 21;
/// Operational-setting channels in a raw record.
pub const SETTING_COUNT: usize = 3;
/// 1-based sensor ids that stay constant over every run and are dropped.
pub const CONSTANT_SENSORS: [usize; 7] = [1, 5, 6, 10, 16, 18, 19];
/// Default cap for piecewise-linear RUL labels.
pub const RUL_MAX: f64 = 125.0;
/// Number of statistic rows appended to a window (mean, slope).
pub const STAT_ROWS: usize = 2;

/// One engine's multivariate record, one row per cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineSeries {
    pub unit_id: u32,
    pub cycles: Vec<u32>,
    pub settings: Vec<[f64; SETTING_COUNT]>,
    /// `cycles.len()` rows of `sensor_ids.len()` values.
    pub sensors: Vec<Vec<f64>>,
    /// 1-based id of each sensor column.
    pub sensor_ids: Vec<usize>,
}

impl EngineSeries {
    /// Checks that the rows are consistent and cycles run 1, 2, 3, … without gaps.
    pub fn new(
        unit_id: u32,
        cycles: Vec<u32>,
        settings: Vec<[f64; SETTING_COUNT]>,
        sensors: Vec<Vec<f64>>,
        sensor_ids: Vec<usize>,
    ) -> Result<Self> {
        if cycles.len() != settings.len() || cycles.len() != sensors.len() {
            return Err(Error::Usage(format!(
                "unit {unit_id}: {} cycles, {} setting rows, {} sensor rows",
                cycles.len(),
                settings.len(),
                sensors.len()
            )));
        }
        for (i, &c) in cycles.iter().enumerate() {
            if c as usize != i + 1 {
                return Err(Error::Usage(format!(
                    "unit {unit_id}: expected cycle {} but found {c}",
                    i + 1
                )));
            }
        }
        if let Some(row) = sensors.iter().find(|r| r.len() != sensor_ids.len()) {
            return Err(Error::Usage(format!(
                "unit {unit_id}: sensor row of width {} where {} expected",
                row.len(),
                sensor_ids.len()
            )));
        }
        Ok(Self {
            unit_id,
            cycles,
            settings,
            sensors,
            sensor_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn sensor_width(&self) -> usize {
        self.sensor_ids.len()
    }
}

/// Drops the constant sensors, keeping the remaining 14 in their original
/// order. Fails unless the series still has all 21 raw channels.
pub fn select_sensors(series: &EngineSeries) -> Result<EngineSeries> {
    if series.sensor_width() != RAW_SENSOR_COUNT {
        return Err(Error::Usage(format!(
            "unit {}: sensor selection expects {RAW_SENSOR_COUNT} columns, found {}",
            series.unit_id,
            series.sensor_width()
        )));
    }
    let keep: Vec<usize> = (0..RAW_SENSOR_COUNT)
        .filter(|i| !CONSTANT_SENSORS.contains(&(i + 1)))
        .collect();
    Ok(EngineSeries {
        unit_id: series.unit_id,
        cycles: series.cycles.clone(),
        settings: series.settings.clone(),
        sensors: series
            .sensors
            .iter()
            .map(|row| keep.iter().map(|&i| row[i]).collect())
            .collect(),
        sensor_ids: keep.iter().map(|&i| series.sensor_ids[i]).collect(),
    })
}

/// Per-column minimum and maximum of the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit(train: &[EngineSeries]) -> Result<Self> {
        let width = train
            .iter()
            .find(|s| !s.is_empty())
            .map(EngineSeries::sensor_width)
            .ok_or_else(|| Error::Usage("cannot fit normalisation on an empty training split".into()))?;
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for s in train {
            if s.sensor_width() != width {
                return Err(Error::Dimension {
                    op: "NormalizationStats::fit",
                    lhs: vec![width],
                    rhs: vec![s.sensor_width()],
                });
            }
            for row in &s.sensors {
                for (j, &v) in row.iter().enumerate() {
                    min[j] = min[j].min(v);
                    max[j] = max[j].max(v);
                }
            }
        }
        Ok(Self { min, max })
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    /// `(x - min) / (max - min)`; a column with `max == min` maps to 0.
    pub fn scale(&self, column: usize, x: f64) -> f64 {
        let range = self.max[column] - self.min[column];
        if range > 0.0 {
            (x - self.min[column]) / range
        } else {
            0.0
        }
    }

    pub fn apply(&self, series: &EngineSeries) -> Result<EngineSeries> {
        if series.sensor_width() != self.min.len() {
            return Err(Error::Dimension {
                op: "NormalizationStats::apply",
                lhs: vec![self.min.len()],
                rhs: vec![series.sensor_width()],
            });
        }
        let mut out = series.clone();
        for row in &mut out.sensors {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale(j, *v);
            }
        }
        Ok(out)
    }
}

/// Fits min-max statistics on `train` only and applies them to both splits.
pub fn fit_and_normalize(
    train: &[EngineSeries],
    test: &[EngineSeries],
) -> Result<(Vec<EngineSeries>, Vec<EngineSeries>, NormalizationStats)> {
    let stats = NormalizationStats::fit(train)?;
    let train = train.iter().map(|s| stats.apply(s)).collect::<Result<_>>()?;
    let test = test.iter().map(|s| stats.apply(s)).collect::<Result<_>>()?;
    Ok((train, test, stats))
}

/// Piecewise-linear labels for a run to failure of `len` cycles:
/// `min(len - t, rul_max)` for cycles `t = 1..=len`.
pub fn label_rul(len: usize, rul_max: f64) -> Vec<f64> {
    (1..=len).map(|t| ((len - t) as f64).min(rul_max)).collect()
}

/// Mean and least-squares slope (against time index `0..T_w-1`) of every
/// column, as a `2 × k` matrix.
pub fn statistical_features(window: &Tensor) -> Result<Tensor> {
    let (rows, cols) = window.matrix_dims("statistical_features")?;
    if rows < 2 {
        return Err(Error::Usage(format!(
            "slope needs at least two time steps, window has {rows}"
        )));
    }
    let n = rows as f64;
    let t_mean = (n - 1.0) / 2.0;
    let t_ss: f64 = (0..rows).map(|t| (t as f64 - t_mean) * (t as f64 - t_mean)).sum();
    let mut out = Tensor::zeros(&[STAT_ROWS, cols]);
    for j in 0..cols {
        let mean = (0..rows).map(|t| window.get(t, j)).sum::<f64>() / n;
        let cov: f64 = (0..rows)
            .map(|t| (t as f64 - t_mean) * (window.get(t, j) - mean))
            .sum();
        out.set(0, j, mean);
        out.set(1, j, cov / t_ss);
    }
    Ok(out)
}

/// One model input: `(T_w + stat_rows) × k` values and the RUL at its last
/// cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub matrix: Tensor,
    pub label: f64,
    pub unit_id: u32,
    pub end_cycle: u32,
}

/// Window layout options.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    /// Append the mean/slope rows.
    pub stat_features: bool,
}

impl WindowSpec {
    pub fn new(length: usize) -> Self {
        Self {
            length,
            stat_features: true,
        }
    }

    pub fn rows(&self) -> usize {
        self.length + if self.stat_features { STAT_ROWS } else { 0 }
    }
}

/// Number of stride-1 windows a series of `len` cycles yields.
pub fn window_count(len: usize, window: usize) -> usize {
    if len >= window {
        len - window + 1
    } else {
        1
    }
}

fn build_window(series: &EngineSeries, end: usize, spec: WindowSpec, label: f64) -> Result<WindowSample> {
    // `end` is a 0-based inclusive row index; rows before 0 repeat row 0.
    let k = series.sensor_width();
    let mut data = Vec::with_capacity(spec.rows() * k);
    for step in 0..spec.length {
        let src = (end + step + 1).saturating_sub(spec.length);
        data.extend_from_slice(&series.sensors[src]);
    }
    let mut matrix = Tensor::matrix(spec.length, k, data)?;
    if spec.stat_features {
        let stats = statistical_features(&matrix)?;
        let mut all = matrix.into_data();
        all.extend_from_slice(stats.data());
        matrix = Tensor::matrix(spec.rows(), k, all)?;
    }
    Ok(WindowSample {
        matrix,
        label,
        unit_id: series.unit_id,
        end_cycle: series.cycles[end],
    })
}

/// Stride-1 windows ending at cycles `T_w..=L`, labelled with `labels` at the
/// window's last cycle. A series shorter than the window yields one window
/// padded at the front by repeating its first row.
pub fn sliding_windows(series: &EngineSeries, spec: WindowSpec, labels: &[f64]) -> Result<Vec<WindowSample>> {
    if spec.length == 0 {
        return Err(Error::Usage("window length must be at least 1".into()));
    }
    if series.is_empty() {
        return Err(Error::Usage(format!("unit {} has no cycles", series.unit_id)));
    }
    if labels.len() != series.len() {
        return Err(Error::Dimension {
            op: "sliding_windows labels",
            lhs: vec![series.len()],
            rhs: vec![labels.len()],
        });
    }
    let first_end = spec.length.min(series.len()) - 1;
    (first_end..series.len())
        .map(|end| build_window(series, end, spec, labels[end]))
        .collect()
}

/// The window ending at the series' final cycle.
pub fn last_window(series: &EngineSeries, spec: WindowSpec, label: f64) -> Result<WindowSample> {
    if series.is_empty() {
        return Err(Error::Usage(format!("unit {} has no cycles", series.unit_id)));
    }
    build_window(series, series.len() - 1, spec, label)
}

/// Training windows plus one final window per test engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

impl DatasetSplit {
    pub fn test_labels(&self) -> Vec<f64> {
        self.test.iter().map(|w| w.label).collect()
    }
}

/// Pruned and normalised engines, ready to be windowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub train: Vec<EngineSeries>,
    pub test: Vec<EngineSeries>,
    /// True RUL at the last cycle of each test engine.
    pub test_rul: Vec<f64>,
    pub stats: NormalizationStats,
}

impl PreparedData {
    /// Sensor pruning and min-max scaling of raw engines.
    pub fn from_raw(train: &[EngineSeries], test: &[EngineSeries], test_rul: Vec<f64>) -> Result<Self> {
        if test.len() != test_rul.len() {
            return Err(Error::Usage(format!(
                "{} test engines but {} RUL values",
                test.len(),
                test_rul.len()
            )));
        }
        let train: Vec<_> = train.iter().map(select_sensors).collect::<Result<_>>()?;
        let test: Vec<_> = test.iter().map(select_sensors).collect::<Result<_>>()?;
        let (train, test, stats) = fit_and_normalize(&train, &test)?;
        Ok(Self {
            train,
            test,
            test_rul,
            stats,
        })
    }

    pub fn sensor_ids(&self) -> &[usize] {
        self.train.first().map_or(&[], |s| &s.sensor_ids)
    }

    /// Windows every training engine with capped labels and takes the final
    /// window of every test engine.
    pub fn windows(&self, spec: WindowSpec, rul_max: f64) -> Result<DatasetSplit> {
        let mut train = Vec::new();
        for s in &self.train {
            let labels = label_rul(s.len(), rul_max);
            train.extend(sliding_windows(s, spec, &labels)?);
        }
        let test = self
            .test
            .iter()
            .zip(&self.test_rul)
            .map(|(s, &rul)| last_window(s, spec, rul))
            .collect::<Result<_>>()?;
        Ok(DatasetSplit { train, test })
    }
}
