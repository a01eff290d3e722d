//! Text log format for visit histories.
//!
//! One line per visit:
//!
//! ```text
//! 2006-12-11: <<<VISIT 1/2>>> CDRSB: 0.5, MMSE: 27
//! ```
//!
//! Keys appear in byte-wise ascending order (the `BTreeMap` order of the
//! observations); values use the shortest decimal form that parses back to
//! the same `f64`. A visit without observations is just the date and the
//! header. Lines are joined with `\n`.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use crate::cohort::Visit;
use crate::error::{Error, Result};

const OPEN: &str = "<<<VISIT ";
const CLOSE: &str = ">>>";

pub fn linearize_visit(visit: &Visit, ordinal: usize, total: usize) -> String {
    debug_assert!(ordinal >= 1 && ordinal <= total);
    let mut line = format!("{}: {OPEN}{ordinal}/{total}{CLOSE}", visit.date.format("%Y-%m-%d"));
    let mut first = true;
    for (key, value) in &visit.observations {
        line.push_str(if first { " " } else { ", " });
        first = false;
        line.push_str(key);
        line.push_str(": ");
        line.push_str(&format_value(*value));
    }
    line
}

pub fn format_value(value: f64) -> String {
    format!("{value}")
}

/// Serialize `visits` (already in chronological order) as a history log.
pub fn linearize_history(visits: &[Visit]) -> String {
    let n = visits.len();
    visits.iter().enumerate().map(|(i, v)| linearize_visit(v, i + 1, n)).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedVisit {
    pub date: NaiveDate,
    pub ordinal: usize,
    pub total: usize,
    pub observations: BTreeMap<String, f64>,
}

fn bad(line: &str, why: &str) -> Error {
    Error::Feature(format!("{why} in line `{line}`"))
}

pub fn parse_visit_line(line: &str) -> Result<ParsedVisit> {
    let (date_part, rest) = line.split_once(": ").ok_or_else(|| bad(line, "missing date separator"))?;
    let date = NaiveDate::parse_from_str(date_part, "%Y-%m-%d").map_err(|_| bad(line, "bad date"))?;
    let rest = rest.strip_prefix(OPEN).ok_or_else(|| bad(line, "missing visit header"))?;
    let (counter, rest) = rest.split_once(CLOSE).ok_or_else(|| bad(line, "unterminated visit header"))?;
    let (k, n) = counter.split_once('/').ok_or_else(|| bad(line, "bad visit counter"))?;
    let ordinal: usize = k.parse().map_err(|_| bad(line, "bad visit ordinal"))?;
    let total: usize = n.parse().map_err(|_| bad(line, "bad visit total"))?;
    if ordinal == 0 || ordinal > total {
        return Err(bad(line, "visit ordinal out of range"));
    }

    let mut observations = BTreeMap::new();
    let body = rest.trim();
    if !body.is_empty() {
        for field in body.split(", ") {
            let (key, value) = field.split_once(": ").ok_or_else(|| bad(line, "bad observation"))?;
            let value: f64 = value.trim().parse().map_err(|_| bad(line, "non-numeric observation"))?;
            if !value.is_finite() {
                return Err(bad(line, "non-finite observation"));
            }
            if observations.insert(key.trim().to_string(), value).is_some() {
                return Err(bad(line, "duplicate key"));
            }
        }
    }
    Ok(ParsedVisit { date, ordinal, total, observations })
}

/// Parse a history log back into visits, sorted by date. Blank lines are
/// skipped.
pub fn parse_history(text: &str) -> Result<Vec<ParsedVisit>> {
    let mut visits = text.lines().filter(|l| !l.trim().is_empty()).map(parse_visit_line).collect::<Result<Vec<_>>>()?;
    visits.sort_by(|a, b| a.date.cmp(&b.date).then(a.ordinal.cmp(&b.ordinal)));
    Ok(visits)
}

/// Every `YYYY-MM-DD` token in `text`, in order of appearance.
pub fn scan_dates(text: &str) -> Vec<NaiveDate> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    if bytes.len() < 10 {
        return out;
    }
    let shape = |w: &[u8]| {
        w.iter().enumerate().all(|(i, c)| match i {
            4 | 7 => *c == b'-',
            _ => c.is_ascii_digit(),
        })
    };
    let mut i = 0;
    while i + 10 <= bytes.len() {
        let w = &bytes[i..i + 10];
        let boundary_before = i == 0 || !bytes[i - 1].is_ascii_digit();
        let boundary_after = i + 10 == bytes.len() || !bytes[i + 10].is_ascii_digit();
        if boundary_before && boundary_after && shape(w) {
            if let Ok(d) = NaiveDate::parse_from_str(&text[i..i + 10], "%Y-%m-%d") {
                out.push(d);
                i += 10;
                continue;
            }
        }
        i += 1;
    }
    out
}
