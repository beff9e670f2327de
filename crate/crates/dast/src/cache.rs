//! Preprocessed-dataset cache: the normalised engines plus everything
//! needed to rebuild identical windows, keyed by a fingerprint of the raw
//! files and the preprocessing settings.

use std::path::Path;

use dast_core::data::{DatasetSplit, PreparedData, WindowSpec, RUL_MAX};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cmapss::{self, Subset};
use crate::error::{io_err, json_err, Error, Result};

pub const CACHE_FORMAT: &str = "dast-dataset";
pub const CACHE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetCache {
    pub format: String,
    pub version: u32,
    /// Hex SHA-256 of the raw files and the settings below.
    pub fingerprint: String,
    pub subset: Subset,
    pub spec: WindowSpec,
    pub rul_max: f64,
    pub data: PreparedData,
}

/// Digest of the three raw files and the preprocessing settings.
pub fn fingerprint(texts: &[String; 3], subset: Subset, spec: WindowSpec, rul_max: f64) -> String {
    let mut h = Sha256::new();
    h.update(format!("{CACHE_FORMAT} v{CACHE_VERSION}\n").as_bytes());
    h.update(format!("{subset} {} {} {rul_max:?}\n", spec.length, spec.stat_features).as_bytes());
    for t in texts {
        h.update((t.len() as u64).to_le_bytes());
        h.update(t.as_bytes());
    }
    hex::encode(h.finalize())
}

impl DatasetCache {
    /// Parses, prunes and normalises the subset found in `dir`.
    pub fn build(dir: &Path, subset: Subset, spec: WindowSpec) -> Result<Self> {
        let (texts, paths) = cmapss::read_files(dir, subset)?;
        let raw = cmapss::parse_subset([&texts[0], &texts[1], &texts[2]], &paths)?;
        let data = PreparedData::from_raw(&raw.train, &raw.test, raw.test_rul)?;
        Ok(Self {
            format: CACHE_FORMAT.into(),
            version: CACHE_VERSION,
            fingerprint: fingerprint(&texts, subset, spec, RUL_MAX),
            subset,
            spec,
            rul_max: RUL_MAX,
            data,
        })
    }

    /// Reuses `cache_path` when its fingerprint matches the files in `dir`,
    /// otherwise rebuilds and rewrites it. Returns the cache and whether it
    /// was reused.
    pub fn load_or_build(dir: &Path, subset: Subset, spec: WindowSpec, cache_path: &Path) -> Result<(Self, bool)> {
        if cache_path.exists() {
            let (texts, _) = cmapss::read_files(dir, subset)?;
            let want = fingerprint(&texts, subset, spec, RUL_MAX);
            if let Ok(existing) = Self::load(cache_path) {
                if existing.fingerprint == want {
                    return Ok((existing, true));
                }
            }
        }
        let built = Self::build(dir, subset, spec)?;
        built.save(cache_path)?;
        Ok((built, false))
    }

    pub fn windows(&self) -> Result<DatasetSplit> {
        Ok(self.data.windows(self.spec, self.rul_max)?)
    }

    pub fn sensor_count(&self) -> usize {
        self.data.sensor_ids().len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(self).expect("dataset cache serialises");
        out.push(b'\n');
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let cache: Self = serde_json::from_slice(&bytes).map_err(json_err(path))?;
        if cache.format != CACHE_FORMAT || cache.version != CACHE_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported dataset cache {} v{} (expected {CACHE_FORMAT} v{CACHE_VERSION})",
                path.display(),
                cache.format,
                cache.version
            )));
        }
        Ok(cache)
    }
}
