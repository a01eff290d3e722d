//! Verifiable rewards.
//!
//! Stage 1 scores a forecast with a tolerance band: reward 1 iff
//! `|predicted - truth| <= delta`, boundary included. Stage 2 scores the
//! binary diagnosis by exact match. Completions carry their answer as
//! `<answer>\boxed{v}</answer>`; a completion that does not parse earns 0.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scales::Profile;

pub fn r_cold(predicted: f64, truth: f64, delta: f64) -> f64 {
    if (predicted - truth).abs() <= delta {
        1.0
    } else {
        0.0
    }
}

pub fn r_task(predicted_label: u8, true_label: u8) -> f64 {
    if predicted_label == true_label {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceEntry {
    pub range_lo: f64,
    pub range_hi: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ToleranceProfile {
    pub entries: BTreeMap<String, ToleranceEntry>,
}

impl ToleranceProfile {
    pub fn amc() -> Self {
        Self::from_rows(&[("MMSE", 0.0, 30.0, 2.0), ("GDS", 1.0, 7.0, 0.0), ("CDR", 0.0, 3.0, 0.0)])
    }

    /// Stored verbatim; CDRSB keeps its published 1.0 rather than the
    /// proportional-rule value.
    pub fn adni() -> Self {
        Self::from_rows(&[
            ("MMSE", 0.0, 30.0, 2.0),
            ("CDRSB", 0.0, 18.0, 1.0),
            ("ADAS11", 0.0, 70.0, 5.0),
            ("ADAS13", 0.0, 85.0, 6.0),
            ("ADASQ4", 0.0, 10.0, 1.0),
            ("RAVLT_learning", -20.0, 20.0, 3.0),
            ("LDELTOTAL", 0.0, 25.0, 2.0),
        ])
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Amc => Self::amc(),
            Profile::Adni => Self::adni(),
        }
    }

    fn from_rows(rows: &[(&str, f64, f64, f64)]) -> Self {
        let entries = rows
            .iter()
            .map(|&(n, lo, hi, delta)| (n.to_string(), ToleranceEntry { range_lo: lo, range_hi: hi, delta }))
            .collect();
        ToleranceProfile { entries }
    }

    pub fn tolerance_for(&self, index: &str) -> Result<f64> {
        self.entries.get(index).map(|e| e.delta).ok_or_else(|| Error::UnknownIndex(index.to_string()))
    }

    pub fn insert(&mut self, index: &str, entry: ToleranceEntry) -> Result<()> {
        if !(entry.delta.is_finite() && entry.delta >= 0.0) {
            return Err(Error::Config(format!("{index}: delta must be finite and >= 0")));
        }
        if !(entry.range_lo.is_finite() && entry.range_hi.is_finite() && entry.range_lo < entry.range_hi) {
            return Err(Error::Config(format!("{index}: range_lo must be below range_hi")));
        }
        self.entries.insert(index.to_string(), entry);
        Ok(())
    }

    /// One entry per line: `index, range_lo, range_hi, delta`. Blank lines
    /// and `#` comments are ignored.
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut profile = ToleranceProfile::default();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(format!("tolerance line {}: {e}", i + 1)))?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!("tolerance line {}: expected 4 fields", i + 1)));
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::Parse(format!("tolerance line {}: `{s}` is not a number", i + 1)))
            };
            profile.insert(
                fields[0],
                ToleranceEntry { range_lo: num(fields[1])?, range_hi: num(fields[2])?, delta: num(fields[3])? },
            )?;
        }
        Ok(profile)
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(n, e)| format!("{n}, {}, {}, {}\n", e.range_lo, e.range_hi, e.delta)).collect()
    }
}

pub fn tolerance_for(index: &str, profile: &ToleranceProfile) -> Result<f64> {
    profile.tolerance_for(index)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub value: f64,
    pub raw_span: String,
}

/// Numeric content of the first `\boxed{...}` inside `<answer>...</answer>`.
pub fn parse_boxed_answer(completion: &str) -> Result<ParsedAnswer> {
    let fail = |why: &str| Error::Parse(format!("answer: {why}"));
    let start = completion.find("<answer>").ok_or_else(|| fail("no <answer> block"))? + "<answer>".len();
    let end =
        completion[start..].find("</answer>").map(|e| start + e).ok_or_else(|| fail("unterminated <answer> block"))?;
    let block = &completion[start..end];
    let open = block.find("\\boxed{").ok_or_else(|| fail("no \\boxed{} in answer"))?;
    let content_start = open + "\\boxed{".len();
    let close = block[content_start..].find('}').ok_or_else(|| fail("unterminated \\boxed{"))?;
    let raw = &block[content_start..content_start + close];
    let value: f64 = raw.trim().parse().map_err(|_| fail("non-numeric boxed content"))?;
    if !value.is_finite() {
        return Err(fail("non-finite boxed content"));
    }
    Ok(ParsedAnswer { value, raw_span: block[open..content_start + close + 1].to_string() })
}

pub fn format_boxed_answer(value: f64) -> String {
    format!("<answer>\\boxed{{{value}}}</answer>")
}

/// How a completion is scored against its sample target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardRule {
    Tolerance { delta: f64 },
    ExactLabel,
}

impl RewardRule {
    /// Reward for a completion; malformed completions score 0.
    pub fn score(&self, completion: &str, target: f64) -> f64 {
        let Ok(answer) = parse_boxed_answer(completion) else {
            return 0.0;
        };
        match *self {
            RewardRule::Tolerance { delta } => r_cold(answer.value, target, delta),
            RewardRule::ExactLabel => {
                let v = answer.value;
                if v != 0.0 && v != 1.0 {
                    return 0.0;
                }
                r_task(v as u8, u8::from(target >= 0.5))
            }
        }
    }

    pub fn for_task(task: &str, tolerances: &ToleranceProfile) -> Result<Self> {
        if task == crate::scales::DIAGNOSIS {
            Ok(RewardRule::ExactLabel)
        } else {
            Ok(RewardRule::Tolerance { delta: tolerances.tolerance_for(task)? })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scales;
    use proptest::prelude::*;

    #[test]
    fn cold_examples() {
        assert_eq!(r_cold(22.0, 24.0, 2.0), 1.0);
        assert_eq!(r_cold(4.0, 4.0, 0.0), 1.0);
        assert_eq!(r_cold(21.0, 24.0, 2.0), 0.0);
        assert_eq!(r_cold(26.0, 24.0, 2.0), 1.0);
    }

    #[test]
    fn task_examples() {
        assert_eq!(r_task(1, 1), 1.0);
        assert_eq!(r_task(0, 1), 0.0);
        assert_eq!(r_task(0, 0), 1.0);
    }

    #[test]
    fn lookups() {
        let adni = ToleranceProfile::adni();
        assert_eq!(tolerance_for("ADAS13", &adni).unwrap(), 6.0);
        assert_eq!(tolerance_for("RAVLT_learning", &adni).unwrap(), 3.0);
        assert_eq!(tolerance_for("GDS", &ToleranceProfile::amc()).unwrap(), 0.0);
        assert!(matches!(tolerance_for("GDS", &adni), Err(Error::UnknownIndex(_))));
    }

    #[test]
    fn profile_text_round_trip() {
        let p = ToleranceProfile::adni();
        let back = ToleranceProfile::read(p.to_text().as_bytes()).unwrap();
        assert_eq!(back, p);
        assert!(ToleranceProfile::read("MMSE, 0, 30\n".as_bytes()).is_err());
        assert!(ToleranceProfile::read("MMSE, 30, 0, 2\n".as_bytes()).is_err());
        assert!(ToleranceProfile::read("MMSE, 0, 30, -1\n".as_bytes()).is_err());
        let commented = ToleranceProfile::read("# index, lo, hi, delta\nMMSE, 0, 30, 2 # mmse\n\n".as_bytes()).unwrap();
        assert_eq!(commented.tolerance_for("MMSE").unwrap(), 2.0);
    }

    #[test]
    fn boxed_examples() {
        assert_eq!(parse_boxed_answer("<answer>\\boxed{17}</answer>").unwrap().value, 17.0);
        assert!(parse_boxed_answer("no box here").is_err());
        let p = parse_boxed_answer("<think>hmm \\boxed{3}</think><answer>the CDR is \\boxed{0.5}</answer>").unwrap();
        assert_eq!(p.value, 0.5);
        assert_eq!(p.raw_span, "\\boxed{0.5}");
        for bad in [
            "<answer>17</answer>",
            "<answer>\\boxed{abc}</answer>",
            "<answer>\\boxed{inf}</answer>",
            "<answer>\\boxed{1",
            "\\boxed{1}",
        ] {
            assert!(parse_boxed_answer(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn malformed_scores_zero() {
        let rule = RewardRule::Tolerance { delta: 2.0 };
        assert_eq!(rule.score("oops", 24.0), 0.0);
        assert_eq!(rule.score(&format_boxed_answer(23.0), 24.0), 1.0);
        assert_eq!(RewardRule::ExactLabel.score(&format_boxed_answer(0.5), 1.0), 0.0);
        assert_eq!(RewardRule::ExactLabel.score(&format_boxed_answer(1.0), 1.0), 1.0);
    }

    #[test]
    fn every_representable_value_round_trips() {
        for spec in scales::all_indices() {
            for v in spec.values() {
                assert_eq!(parse_boxed_answer(&format_boxed_answer(v)).unwrap().value, v);
            }
        }
        for v in [0.0, 1.0] {
            assert_eq!(parse_boxed_answer(&format_boxed_answer(v)).unwrap().value, v);
        }
    }

    proptest! {
        #[test]
        fn symmetric_in_error_sign(s in -50.0f64..50.0, e in 0.0f64..10.0, d in 0.0f64..5.0) {
            prop_assert_eq!(r_cold(s + e, s, d), r_cold(s - e, s, d));
        }

        #[test]
        fn identity_always_rewarded(x in -100.0f64..100.0, d in 0.0f64..10.0) {
            prop_assert_eq!(r_cold(x, x, d), 1.0);
        }

        #[test]
        fn zero_delta_is_exact_match(p in 0u8..=1, t in 0u8..=1) {
            prop_assert_eq!(r_task(p, t), r_cold(f64::from(p), f64::from(t), 0.0));
        }

        #[test]
        fn rewards_are_binary(p in -100.0f64..100.0, t in -100.0f64..100.0, d in 0.0f64..10.0) {
            let r = r_cold(p, t, d);
            prop_assert!(r == 0.0 || r == 1.0);
        }

        #[test]
        fn any_finite_value_round_trips(v in -1e6f64..1e6) {
            prop_assert_eq!(parse_boxed_answer(&format_boxed_answer(v)).unwrap().value, v);
        }
    }
}
