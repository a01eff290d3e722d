//! Clinical index registry.
//!
//! Each index carries its declared range, the grid of values it can take
//! (integers for most scores, half points for CDR-SB, the CDR global set),
//! a zero-noise mapping from latent severity level to value, and the unit
//! of observation noise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of latent severity levels (mirrors GDS 1..=7).
pub const LEVELS: usize = 7;

/// First latent level labelled as dementia (CDR global >= 1).
pub const DEMENTIA_LEVEL: u8 = 3;

/// Task name used for the binary stage-2 target.
pub const DIAGNOSIS: &str = "diagnosis";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Amc,
    Adni,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Amc => "amc",
            Profile::Adni => "adni",
        }
    }

    /// Indices observed at visits, in alphabetical order.
    pub fn indices(self) -> Vec<&'static IndexSpec> {
        let names: &[&str] = match self {
            Profile::Amc => &["CDR", "GDS", "MMSE"],
            Profile::Adni => &["ADAS11", "ADAS13", "ADASQ4", "CDRSB", "LDELTOTAL", "MMSE", "RAVLT_learning"],
        };
        names.iter().map(|n| index(n).expect("registered")).collect()
    }

    /// Index whose zero-shot readout stands in for a diagnosis when no
    /// stage-2 head has been trained, with its dementia cut-off.
    pub fn diagnosis_proxy(self) -> (&'static str, f64) {
        match self {
            Profile::Amc => ("CDR", 1.0),
            Profile::Adni => ("CDRSB", 4.5),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "amc" => Ok(Profile::Amc),
            "adni" => Ok(Profile::Adni),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected amc or adni)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grid {
    /// `lo, lo + step, ..., hi`.
    Regular { step: f64 },
    /// Explicit value set.
    Set(&'static [f64]),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexSpec {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
    pub grid: Grid,
    /// Value at each latent level with zero noise.
    pub level_map: [f64; LEVELS],
    /// Noise standard deviation at `noise_scale = 1`.
    pub noise_unit: f64,
    /// Probability the index is recorded at a visit.
    pub observe_prob: f64,
}

const CDR_SET: &[f64] = &[0.0, 0.5, 1.0, 2.0, 3.0];

static REGISTRY: &[IndexSpec] = &[
    IndexSpec {
        name: "MMSE",
        lo: 0.0,
        hi: 30.0,
        grid: Grid::Regular { step: 1.0 },
        level_map: [30.0, 28.0, 25.0, 21.0, 16.0, 10.0, 4.0],
        noise_unit: 1.5,
        observe_prob: 0.9,
    },
    IndexSpec {
        name: "GDS",
        lo: 1.0,
        hi: 7.0,
        grid: Grid::Regular { step: 1.0 },
        level_map: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
        noise_unit: 0.5,
        observe_prob: 0.85,
    },
    IndexSpec {
        name: "CDR",
        lo: 0.0,
        hi: 3.0,
        grid: Grid::Set(CDR_SET),
        level_map: [0.0, 0.0, 0.5, 1.0, 1.0, 2.0, 3.0],
        noise_unit: 0.3,
        observe_prob: 0.5,
    },
    IndexSpec {
        name: "CDRSB",
        lo: 0.0,
        hi: 18.0,
        grid: Grid::Regular { step: 0.5 },
        level_map: [0.0, 0.5, 2.0, 4.5, 7.0, 11.0, 16.0],
        noise_unit: 0.75,
        observe_prob: 0.9,
    },
    IndexSpec {
        name: "ADAS11",
        lo: 0.0,
        hi: 70.0,
        grid: Grid::Regular { step: 1.0 },
        level_map: [5.0, 8.0, 12.0, 18.0, 26.0, 38.0, 52.0],
        noise_unit: 2.5,
        observe_prob: 0.85,
    },
    IndexSpec {
        name: "ADAS13",
        lo: 0.0,
        hi: 85.0,
        grid: Grid::Regular { step: 1.0 },
        level_map: [8.0, 12.0, 18.0, 27.0, 37.0, 52.0, 68.0],
        noise_unit: 3.0,
        observe_prob: 0.85,
    },
    IndexSpec {
        name: "ADASQ4",
        lo: 0.0,
        hi: 10.0,
        grid: Grid::Regular { step: 1.0 },
        level_map: [2.0, 3.0, 5.0, 7.0, 8.0, 9.0, 10.0],
        noise_unit: 0.75,
        observe_prob: 0.85,
    },
    IndexSpec {
        name: "RAVLT_learning",
        lo: -20.0,
        hi: 20.0,
        grid: Grid::Regular { step: 1.0 },
        level_map: [8.0, 6.0, 4.0, 3.0, 2.0, 1.0, 0.0],
        noise_unit: 1.5,
        observe_prob: 0.8,
    },
    IndexSpec {
        name: "LDELTOTAL",
        lo: 0.0,
        hi: 25.0,
        grid: Grid::Regular { step: 1.0 },
        level_map: [14.0, 11.0, 7.0, 4.0, 2.0, 1.0, 0.0],
        noise_unit: 1.5,
        observe_prob: 0.8,
    },
];

pub fn index(name: &str) -> Option<&'static IndexSpec> {
    REGISTRY.iter().find(|s| s.name == name)
}

pub fn all_indices() -> &'static [IndexSpec] {
    REGISTRY
}

impl IndexSpec {
    /// Every representable value, ascending.
    pub fn values(&self) -> Vec<f64> {
        match self.grid {
            Grid::Set(vals) => vals.to_vec(),
            Grid::Regular { step } => {
                let n = ((self.hi - self.lo) / step).round() as usize;
                (0..=n).map(|k| self.lo + k as f64 * step).collect()
            }
        }
    }

    /// Nearest representable value after clamping to the range. Ties go to
    /// the lower value.
    pub fn snap(&self, x: f64) -> f64 {
        let x = x.clamp(self.lo, self.hi);
        match self.grid {
            Grid::Regular { step } => {
                let k = ((x - self.lo) / step).round();
                (self.lo + k * step).clamp(self.lo, self.hi)
            }
            Grid::Set(vals) => {
                let mut best = vals[0];
                for &v in vals {
                    if (v - x).abs() < (best - x).abs() {
                        best = v;
                    }
                }
                best
            }
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn span(&self) -> f64 {
        self.hi - self.lo
    }
}
