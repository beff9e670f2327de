//! Synthetic run-to-failure engines in the C-MAPSS layout, for fixtures and
//! smoke runs. Each informative sensor drifts linearly with accumulated wear
//! over the last `RUL_MAX` cycles of life, plus Gaussian noise.

use std::path::Path;

use dast_core::data::{EngineSeries, CONSTANT_SENSORS, RAW_SENSOR_COUNT, RUL_MAX};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cmapss::{format_series, RawSubset, Subset};
use crate::error::{io_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train_engines: usize,
    pub test_engines: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Noise standard deviation relative to each sensor's drift amplitude.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_engines: 20,
            test_engines: 10,
            min_len: 40,
            max_len: 80,
            noise: 0.02,
            seed: 0,
        }
    }
}

struct Sensor {
    base: f64,
    amp: f64,
}

fn engine(unit: u32, len: usize, sensors: &[Sensor], noise: f64, rng: &mut ChaCha8Rng) -> Result<EngineSeries> {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rows = Vec::with_capacity(len);
    let mut settings = Vec::with_capacity(len);
    for t in 1..=len {
        let wear = 1.0 - ((len - t) as f64).min(RUL_MAX) / RUL_MAX;
        rows.push(
            sensors
                .iter()
                .map(|s| s.base + s.amp * wear + noise * s.amp.abs() * std_normal.sample(rng))
                .collect(),
        );
        settings.push([0.001 * std_normal.sample(rng), 0.0003 * std_normal.sample(rng), 100.0]);
    }
    Ok(EngineSeries::new(
        unit,
        (1..=len as u32).collect(),
        settings,
        rows,
        (1..=RAW_SENSOR_COUNT).collect(),
    )?)
}

/// Generates training engines run to failure and test engines cut at a
/// random cycle, with the true RUL of each cut.
pub fn generate(spec: &SyntheticSpec) -> Result<RawSubset> {
    if spec.min_len < 2 || spec.min_len > spec.max_len || spec.train_engines == 0 {
        return Err(Error::Config(format!(
            "synthetic data needs at least one training engine and 2 <= min_len <= max_len, got {spec:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sensors: Vec<Sensor> = (1..=RAW_SENSOR_COUNT)
        .map(|id| {
            let base = rng.random_range(10.0..1000.0);
            let amp = if CONSTANT_SENSORS.contains(&id) {
                0.0
            } else {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                sign * base * rng.random_range(0.005..0.05)
            };
            Sensor { base, amp }
        })
        .collect();

    let mut train = Vec::with_capacity(spec.train_engines);
    for unit in 1..=spec.train_engines as u32 {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        train.push(engine(unit, len, &sensors, spec.noise, &mut rng)?);
    }
    let mut test = Vec::with_capacity(spec.test_engines);
    let mut test_rul = Vec::with_capacity(spec.test_engines);
    for unit in 1..=spec.test_engines as u32 {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut full = engine(unit, len, &sensors, spec.noise, &mut rng)?;
        let keep = rng.random_range(1..len);
        full.cycles.truncate(keep);
        full.settings.truncate(keep);
        full.sensors.truncate(keep);
        test.push(full);
        test_rul.push((len - keep) as f64);
    }
    Ok(RawSubset { train, test, test_rul })
}

/// Writes `raw` into `dir` under the file names of `subset`.
pub fn write_subset(dir: &Path, subset: Subset, raw: &RawSubset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let [train, test, rul] = subset.paths(dir);
    std::fs::write(&train, format_series(&raw.train)).map_err(io_err(&train))?;
    std::fs::write(&test, format_series(&raw.test)).map_err(io_err(&test))?;
    let ruls: String = raw.test_rul.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(&rul, ruls).map_err(io_err(&rul))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let spec = SyntheticSpec { seed: 4, ..SyntheticSpec::default() };
        let a = generate(&spec).unwrap();
        assert_eq!(a, generate(&spec).unwrap());
        assert_ne!(a, generate(&SyntheticSpec { seed: 5, ..spec.clone() }).unwrap());
        assert_eq!(a.train.len(), 20);
        assert_eq!(a.test.len(), a.test_rul.len());
        assert!(a.train.iter().all(|e| (40..=80).contains(&e.len())));
    }

    #[test]
    fn dropped_sensors_are_constant() {
        let a = generate(&SyntheticSpec::default()).unwrap();
        for id in CONSTANT_SENSORS {
            let first = a.train[0].sensors[0][id - 1];
            assert!(a.train.iter().flat_map(|e| &e.sensors).all(|r| r[id - 1] == first));
        }
    }
}
