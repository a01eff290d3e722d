use std::fmt;
use std::str::FromStr;

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scales::Profile;

/// Average Gregorian month, used for the fractional part of a gap.
pub const DAYS_PER_MONTH: f64 = 365.25 / 12.0;

/// Whole calendar months from `from` to `to`, plus the leftover days as a
/// fraction of an average month. Exact integers for dates one or more
/// calendar months apart on the same day of month. Negative when `to`
/// precedes `from`.
pub fn months_between(from: NaiveDate, to: NaiveDate) -> f64 {
    if to < from {
        return -months_between(to, from);
    }
    let mut whole = (to.year_months() - from.year_months()).max(0) as u32;
    let mut base = from.checked_add_months(Months::new(whole)).expect("date in range");
    while base > to {
        whole -= 1;
        base = from.checked_add_months(Months::new(whole)).expect("date in range");
    }
    whole as f64 + (to - base).num_days() as f64 / DAYS_PER_MONTH
}

trait YearMonths {
    fn year_months(&self) -> i64;
}

impl YearMonths for NaiveDate {
    fn year_months(&self) -> i64 {
        use chrono::Datelike;
        i64::from(self.year()) * 12 + i64::from(self.month0())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    Stage1Amc,
    Stage1Adni,
    Stage2Amc,
    Stage2Adni,
}

impl SchemeId {
    pub fn stage1(profile: Profile) -> Self {
        match profile {
            Profile::Amc => SchemeId::Stage1Amc,
            Profile::Adni => SchemeId::Stage1Adni,
        }
    }

    pub fn stage2(profile: Profile) -> Self {
        match profile {
            Profile::Amc => SchemeId::Stage2Amc,
            Profile::Adni => SchemeId::Stage2Adni,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::Stage1Amc => "stage1_amc",
            SchemeId::Stage1Adni => "stage1_adni",
            SchemeId::Stage2Amc => "stage2_amc",
            SchemeId::Stage2Adni => "stage2_adni",
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "stage1_amc" => SchemeId::Stage1Amc,
            "stage1_adni" => SchemeId::Stage1Adni,
            "stage2_amc" => SchemeId::Stage2Amc,
            "stage2_adni" => SchemeId::Stage2Adni,
            other => return Err(Error::Config(format!("unknown gap scheme `{other}`"))),
        })
    }
}

/// Month cut-points mapped to bucket labels. Intervals are `[lo, hi)`;
/// gaps below the first cut-point get the underflow label and gaps at or
/// past the last get the overflow label.
#[derive(Debug, Clone, PartialEq)]
pub struct GapScheme {
    pub id: SchemeId,
    boundaries: Vec<f64>,
    labels: Vec<String>,
    underflow_label: Option<String>,
    overflow_label: String,
}

fn month_label(m: f64) -> String {
    format!("{m}")
}

impl GapScheme {
    pub fn new(id: SchemeId, boundaries: Vec<f64>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::Config("gap scheme needs at least one boundary".into()));
        }
        if boundaries.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Config("gap boundaries must be finite and >= 0".into()));
        }
        if boundaries.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("gap boundaries must be strictly increasing".into()));
        }
        let labels = boundaries.windows(2).map(|w| format!("{}-{}m", month_label(w[0]), month_label(w[1]))).collect();
        let first = boundaries[0];
        let last = *boundaries.last().expect("non-empty");
        Ok(GapScheme {
            id,
            underflow_label: (first > 0.0).then(|| format!("<{}m", month_label(first))),
            overflow_label: format!(">{}m", month_label(last)),
            boundaries,
            labels,
        })
    }

    pub fn standard(id: SchemeId) -> Self {
        let boundaries: Vec<f64> = match id {
            SchemeId::Stage1Amc => (0..=24).map(f64::from).collect(),
            SchemeId::Stage1Adni => (0..=6).map(f64::from).collect(),
            SchemeId::Stage2Amc | SchemeId::Stage2Adni => vec![6.0, 12.0, 18.0, 24.0],
        };
        GapScheme::new(id, boundaries).expect("standard scheme is valid")
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Every label in ascending order of gap.
    pub fn all_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.labels.len() + 2);
        out.extend(self.underflow_label.clone());
        out.extend(self.labels.iter().cloned());
        out.push(self.overflow_label.clone());
        out
    }

    pub fn assign(&self, gap_months: f64) -> Result<String> {
        if gap_months.is_nan() || gap_months < 0.0 {
            return Err(Error::Argument(format!("gap must be >= 0, got {gap_months}")));
        }
        if gap_months < self.boundaries[0] {
            return Ok(self.underflow_label.clone().expect("underflow exists when first boundary > 0"));
        }
        let last = *self.boundaries.last().expect("non-empty");
        if gap_months >= last {
            return Ok(self.overflow_label.clone());
        }
        // Index of the last boundary <= gap.
        let idx = self.boundaries.partition_point(|&b| b <= gap_months) - 1;
        Ok(self.labels[idx].clone())
    }
}

/// Free-function form used by callers that hold a scheme by reference.
pub fn assign_gap_bucket(gap_months: f64, scheme: &GapScheme) -> Result<String> {
    scheme.assign(gap_months)
}
