//! Fixed-length features recovered from a history log.
//!
//! Layout for a profile with `k` indices (alphabetical):
//!
//! | slots            | content                                              |
//! |------------------|------------------------------------------------------|
//! | `4i .. 4i+4`     | index `i`: present flag, last value, last - first, yearly slope |
//! | `4k`             | visit count / 12                                     |
//! | `4k + 1`         | gap to the anchor in months / 24                     |
//! | `4k + 2`         | history span in months / 36                          |
//! | `4k + 3 .. +8`   | gap band one-hot: `<6`, `6-12`, `12-18`, `18-24`, `>=24` months |
//!
//! Values and differences are divided by the index span, so the last value
//! lies in `[0, 1]`. The slope is the first-to-last difference per year of
//! observation span, clamped to `[-2, 2]`, and 0 with a single observation.
//! A missing index is all zeros, including its present flag.

use crate::error::Result;
use crate::samples::{months_between, parse_history, LongitudinalSample};
use crate::scales::Profile;

pub const INDEX_SLOTS: usize = 4;
pub const GAP_BANDS: [f64; 4] = [6.0, 12.0, 18.0, 24.0];
const GLOBAL_SLOTS: usize = 3 + GAP_BANDS.len() + 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

pub fn feature_dim(profile: Profile) -> usize {
    profile.indices().len() * INDEX_SLOTS + GLOBAL_SLOTS
}

pub fn featurize(sample: &LongitudinalSample, profile: Profile) -> Result<FeatureVector> {
    featurize_text(&sample.prompt_text, sample.gap_months, profile)
}

pub fn featurize_text(prompt_text: &str, gap_months: f64, profile: Profile) -> Result<FeatureVector> {
    let visits = parse_history(prompt_text)?;
    let indices = profile.indices();
    let mut values = vec![0.0; feature_dim(profile)];

    for (i, spec) in indices.iter().enumerate() {
        let series: Vec<_> =
            visits.iter().filter_map(|v| v.observations.get(spec.name).map(|x| (v.date, *x))).collect();
        let (Some(&(d0, first)), Some(&(d1, last))) = (series.first(), series.last()) else {
            continue;
        };
        let span = spec.span();
        let delta = (last - first) / span;
        let years = months_between(d0, d1) / 12.0;
        let slope = if series.len() > 1 && years > 0.0 { (delta / years).clamp(-2.0, 2.0) } else { 0.0 };
        let base = i * INDEX_SLOTS;
        values[base] = 1.0;
        values[base + 1] = (last - spec.lo) / span;
        values[base + 2] = delta;
        values[base + 3] = slope;
    }

    let g = indices.len() * INDEX_SLOTS;
    values[g] = visits.len() as f64 / 12.0;
    values[g + 1] = gap_months / 24.0;
    values[g + 2] = match (visits.first(), visits.last()) {
        (Some(a), Some(b)) => months_between(a.date, b.date) / 36.0,
        _ => 0.0,
    };
    let band = GAP_BANDS.partition_point(|&b| b <= gap_months);
    values[g + 3 + band] = 1.0;

    Ok(FeatureVector { values })
}
