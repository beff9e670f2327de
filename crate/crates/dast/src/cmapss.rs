//! Reader for the NASA C-MAPSS text files and the PHM 2008 challenge files,
//! which share one layout: unit, cycle, three settings, 21 sensors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dast_core::data::{EngineSeries, RAW_SENSOR_COUNT, SETTING_COUNT};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const COLUMNS: usize = 2 + SETTING_COUNT + RAW_SENSOR_COUNT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Subset {
    Fd001,
    Fd002,
    Fd003,
    Fd004,
    Phm08,
}

impl Subset {
    pub const ALL: [Subset; 5] = [Self::Fd001, Self::Fd002, Self::Fd003, Self::Fd004, Self::Phm08];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fd001 => "FD001",
            Self::Fd002 => "FD002",
            Self::Fd003 => "FD003",
            Self::Fd004 => "FD004",
            Self::Phm08 => "PHM08",
        }
    }

    /// 40 for the single-condition subsets, 60 for the six-condition ones.
    pub fn default_window(self) -> usize {
        match self {
            Self::Fd001 | Self::Fd003 => 40,
            Self::Fd002 | Self::Fd004 | Self::Phm08 => 60,
        }
    }

    /// `(train, test, rul)` file names inside a dataset directory.
    pub fn file_names(self) -> [String; 3] {
        let n = self.name();
        [format!("train_{n}.txt"), format!("test_{n}.txt"), format!("RUL_{n}.txt")]
    }

    pub fn paths(self, dir: &Path) -> [PathBuf; 3] {
        self.file_names().map(|f| dir.join(f))
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown subset {s:?}; expected one of FD001..FD004, PHM08")))
    }
}

struct Row {
    cycle: u32,
    settings: [f64; SETTING_COUNT],
    sensors: Vec<f64>,
}

fn parse_id(tok: &str, what: &str) -> std::result::Result<u32, String> {
    // the NASA files sometimes write integer columns as reals
    let v: f64 = tok.parse().map_err(|_| format!("{what} {tok:?} is not a number"))?;
    if v.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&v) {
        return Err(format!("{what} {tok:?} is not a positive integer"));
    }
    Ok(v as u32)
}

/// Parses one run-to-failure or test file. Rows may arrive in any order;
/// the result is grouped by unit and sorted by cycle. `path` only labels
/// error messages.
pub fn parse_series(text: &str, path: &Path) -> Result<Vec<EngineSeries>> {
    let mut units: BTreeMap<u32, Vec<(usize, Row)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fail = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != COLUMNS {
            return Err(fail(format!("expected {COLUMNS} columns, found {}", tokens.len())));
        }
        let unit = parse_id(tokens[0], "unit").map_err(&fail)?;
        let cycle = parse_id(tokens[1], "cycle").map_err(&fail)?;
        let mut values = Vec::with_capacity(COLUMNS - 2);
        for tok in &tokens[2..] {
            let v: f64 = tok.parse().map_err(|_| fail(format!("{tok:?} is not a number")))?;
            if !v.is_finite() {
                return Err(fail(format!("{tok:?} is not finite")));
            }
            values.push(v);
        }
        let sensors = values.split_off(SETTING_COUNT);
        let settings = [values[0], values[1], values[2]];
        units.entry(unit).or_default().push((line_no, Row { cycle, settings, sensors }));
    }

    units
        .into_iter()
        .map(|(unit, mut rows)| {
            rows.sort_by_key(|(_, r)| r.cycle);
            for (expect, (line, r)) in (1u32..).zip(&rows) {
                if r.cycle != expect {
                    let message = if r.cycle < expect {
                        format!("unit {unit} repeats cycle {}", r.cycle)
                    } else {
                        format!("unit {unit} is missing cycle {expect}")
                    };
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: *line,
                        message,
                    });
                }
            }
            let cycles = rows.iter().map(|(_, r)| r.cycle).collect();
            let settings = rows.iter().map(|(_, r)| r.settings).collect();
            let sensors = rows.into_iter().map(|(_, r)| r.sensors).collect();
            Ok(EngineSeries::new(unit, cycles, settings, sensors, (1..=RAW_SENSOR_COUNT).collect())?)
        })
        .collect()
}

/// One true RUL per line.
pub fn parse_rul(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let fail = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        match tokens.as_slice() {
            [] => continue,
            [tok] => {
                let v: f64 = tok.parse().map_err(|_| fail(format!("{tok:?} is not a number")))?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(fail(format!("RUL {tok:?} must be a finite value >= 0")));
                }
                out.push(v);
            }
            _ => return Err(fail(format!("expected one RUL value, found {}", tokens.len()))),
        }
    }
    Ok(out)
}

/// Parsed contents of one subset.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSubset {
    pub train: Vec<EngineSeries>,
    pub test: Vec<EngineSeries>,
    pub test_rul: Vec<f64>,
}

/// Parses a train/test/RUL triple of already-read file contents.
pub fn parse_subset(texts: [&str; 3], paths: &[PathBuf; 3]) -> Result<RawSubset> {
    let train = parse_series(texts[0], &paths[0])?;
    let test = parse_series(texts[1], &paths[1])?;
    let test_rul = parse_rul(texts[2], &paths[2])?;
    if test_rul.len() < test.len() {
        return Err(Error::Parse {
            path: paths[2].clone(),
            line: test_rul.len() + 1,
            message: format!(
                "missing RUL for test unit {} ({} test engines, {} RUL values)",
                test[test_rul.len()].unit_id,
                test.len(),
                test_rul.len()
            ),
        });
    }
    if test_rul.len() > test.len() {
        return Err(Error::Parse {
            path: paths[2].clone(),
            line: test.len() + 1,
            message: format!("{} RUL values for {} test engines", test_rul.len(), test.len()),
        });
    }
    Ok(RawSubset { train, test, test_rul })
}

/// Reads the raw bytes of a subset's three files.
pub fn read_files(dir: &Path, subset: Subset) -> Result<([String; 3], [PathBuf; 3])> {
    let paths = subset.paths(dir);
    let mut texts: [String; 3] = Default::default();
    for (t, p) in texts.iter_mut().zip(&paths) {
        *t = std::fs::read_to_string(p).map_err(io_err(p))?;
    }
    Ok((texts, paths))
}

pub fn load_subset(dir: &Path, subset: Subset) -> Result<RawSubset> {
    let (texts, paths) = read_files(dir, subset)?;
    parse_subset([&texts[0], &texts[1], &texts[2]], &paths)
}

/// Formats engines in the same whitespace layout the parser reads.
pub fn format_series(engines: &[EngineSeries]) -> String {
    let mut out = String::new();
    for e in engines {
        for i in 0..e.len() {
            out.push_str(&format!("{} {}", e.unit_id, e.cycles[i]));
            for v in e.settings[i].iter().chain(&e.sensors[i]) {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
    }
    out
}
