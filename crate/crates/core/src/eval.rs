//! Binary classification metrics, tolerance accuracy, gap-bucket strata
//! and seed aggregation.
//!
//! Metrics are stored as fractions in `[0, 1]`; tables print them as
//! percentages. Label 1 (dementia) is the positive class. A precision or
//! recall with a zero denominator is reported as 0 and flagged, and F1 is
//! 0 whenever `P + R = 0`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::r_cold;
use crate::samples::LongitudinalSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, prediction: u8, label: u8) {
        match (prediction, label) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub n_seeds: usize,
    pub accuracy: MeanStd,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<String, MetricsReport>,
    /// Present on seed aggregates, whose top-level metrics are seed means.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<SeedSummary>,
}

pub fn f1_from_precision_recall(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl MetricsReport {
    pub fn from_counts(counts: ConfusionCounts) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let (precision, precision_undefined) = ratio(counts.tp, counts.tp + counts.fp);
        let (recall, recall_undefined) = ratio(counts.tp, counts.tp + counts.fn_);
        let (accuracy, _) = ratio(counts.tp + counts.tn, counts.total());
        MetricsReport {
            accuracy,
            precision,
            recall,
            f1: f1_from_precision_recall(precision, recall),
            counts,
            precision_undefined,
            recall_undefined,
            strata: BTreeMap::new(),
            seeds: None,
        }
    }
}

fn check_binary(values: &[u8], what: &str) -> Result<()> {
    match values.iter().find(|v| **v > 1) {
        Some(v) => Err(Error::Argument(format!("{what} must be 0 or 1, found {v}"))),
        None => Ok(()),
    }
}

pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    check_binary(predictions, "predictions")?;
    check_binary(labels, "labels")?;
    let mut counts = ConfusionCounts::default();
    for (p, l) in predictions.iter().zip(labels) {
        counts.add(*p, *l);
    }
    Ok(MetricsReport::from_counts(counts))
}

/// Fraction of predictions within `delta` of the truth.
pub fn index_accuracy(predictions: &[f64], truths: &[f64], delta: f64) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Argument(format!("{} predictions for {} truths", predictions.len(), truths.len())));
    }
    if predictions.is_empty() {
        return Err(Error::Argument("no predictions to score".into()));
    }
    let hits: f64 = predictions.iter().zip(truths).map(|(p, t)| r_cold(*p, *t, delta)).sum();
    Ok(hits / predictions.len() as f64)
}

/// Overall metrics with one sub-report per gap bucket that has samples.
pub fn stratify_by_bucket(predictions: &[u8], samples: &[&LongitudinalSample]) -> Result<MetricsReport> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label()).collect();
    let mut report = compute_metrics(predictions, &labels)?;
    let mut buckets: BTreeMap<&str, ConfusionCounts> = BTreeMap::new();
    for ((p, l), s) in predictions.iter().zip(&labels).zip(samples) {
        buckets.entry(s.gap_bucket.as_str()).or_default().add(*p, *l);
    }
    report.strata = buckets.into_iter().map(|(b, c)| (b.to_string(), MetricsReport::from_counts(c))).collect();
    Ok(report)
}

/// Per-metric mean and population std over seeds. Counts are summed.
pub fn aggregate_seeds(reports: &[MetricsReport]) -> Result<MetricsReport> {
    if reports.is_empty() {
        return Err(Error::Argument("no reports to aggregate".into()));
    }
    let pick = |f: fn(&MetricsReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let summary = SeedSummary {
        n_seeds: reports.len(),
        accuracy: pick(|r| r.accuracy),
        precision: pick(|r| r.precision),
        recall: pick(|r| r.recall),
        f1: pick(|r| r.f1),
    };
    let mut counts = ConfusionCounts::default();
    for r in reports {
        counts.merge(&r.counts);
    }
    Ok(MetricsReport {
        accuracy: summary.accuracy.mean,
        precision: summary.precision.mean,
        recall: summary.recall.mean,
        f1: summary.f1.mean,
        counts,
        precision_undefined: reports.iter().any(|r| r.precision_undefined),
        recall_undefined: reports.iter().any(|r| r.recall_undefined),
        strata: BTreeMap::new(),
        seeds: Some(summary),
    })
}

fn cell(value: f64, spread: Option<f64>) -> String {
    match spread {
        Some(s) => format!("{:.2} ± {:.2}", 100.0 * value, 100.0 * s),
        None => format!("{:.2}", 100.0 * value),
    }
}

/// Aligned text table, one row per named report, metrics in percent.
pub fn render_table(rows: &[(String, &MetricsReport)]) -> String {
    let header = ["Model", "Accuracy", "Precision", "Recall", "F1"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|(name, r)| {
            let s = r.seeds.as_ref();
            [
                name.clone(),
                cell(r.accuracy, s.map(|s| s.accuracy.std)),
                cell(r.precision, s.map(|s| s.precision.std)),
                cell(r.recall, s.map(|s| s.recall.std)),
                cell(r.f1, s.map(|s| s.f1.std)),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: [&str; 5]| {
        let mut out = String::new();
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            let pad = w - c.chars().count();
            if i == 0 {
                let _ = write!(out, "{c}{}", " ".repeat(pad));
            } else {
                let _ = write!(out, "  {}{c}", " ".repeat(pad));
            }
        }
        out.push('\n');
        out
    };
    let mut out = line(header);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &body {
        out.push_str(&line([&row[0], &row[1], &row[2], &row[3], &row[4]]));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumRecord {
    pub name: String,
    pub stratum: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
}

/// One machine-readable record for the overall report and one per stratum.
pub fn stratum_records(name: &str, report: &MetricsReport) -> Vec<StratumRecord> {
    let record = |stratum: &str, r: &MetricsReport| StratumRecord {
        name: name.to_string(),
        stratum: stratum.to_string(),
        accuracy: r.accuracy,
        precision: r.precision,
        recall: r.recall,
        f1: r.f1,
        counts: r.counts,
    };
    std::iter::once(record("overall", report)).chain(report.strata.iter().map(|(b, r)| record(b, r))).collect()
}

pub fn records_to_jsonl(records: &[StratumRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::Stage;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn sample(label: u8, bucket: &str) -> LongitudinalSample {
        LongitudinalSample {
            sample_id: format!("s-{bucket}-{label}"),
            patient_id: "P000001".into(),
            stage: Stage::Stage2,
            task: crate::scales::DIAGNOSIS.into(),
            prompt_text: String::new(),
            anchor_date: NaiveDate::from_ymd_opt(2012, 1, 1).unwrap(),
            target: f64::from(label),
            gap_months: 7.0,
            gap_bucket: bucket.into(),
        }
    }

    #[test]
    fn hand_counted_example() {
        let r = compute_metrics(&[1, 1, 0, 1], &[1, 0, 0, 1]).unwrap();
        assert_eq!(r.counts, ConfusionCounts { tp: 2, fp: 1, tn: 1, fn_: 0 });
        assert_eq!(r.accuracy, 0.75);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn published_rows_are_harmonic_means() {
        assert!((f1_from_precision_recall(72.19, 82.56) - 77.03).abs() <= 0.01);
        assert!((f1_from_precision_recall(70.99, 79.31) - 74.91).abs() <= 0.05);
    }

    #[test]
    fn perfect_and_degenerate() {
        let r = compute_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((r.accuracy, r.precision, r.recall, r.f1), (1.0, 1.0, 1.0, 1.0));
        let r = compute_metrics(&[0, 0], &[0, 0]).unwrap();
        assert!(r.precision_undefined && r.recall_undefined);
        assert_eq!(r.f1, 0.0);
        assert!(compute_metrics(&[], &[]).is_err());
        assert!(compute_metrics(&[1], &[1, 0]).is_err());
        assert!(compute_metrics(&[2], &[1]).is_err());
    }

    #[test]
    fn index_accuracy_examples() {
        assert_eq!(index_accuracy(&[22.0, 21.0], &[24.0, 24.0], 2.0).unwrap(), 0.5);
        assert_eq!(index_accuracy(&[26.0, 22.0], &[24.0, 24.0], 2.0).unwrap(), 1.0);
        assert_eq!(index_accuracy(&[3.0], &[3.0], 0.0).unwrap(), 1.0);
        assert!(index_accuracy(&[], &[], 1.0).is_err());
    }

    #[test]
    fn strata_examples() {
        let one = [sample(1, "6-12m"), sample(0, "6-12m")];
        let refs: Vec<_> = one.iter().collect();
        let r = stratify_by_bucket(&[1, 1], &refs).unwrap();
        assert_eq!(r.strata.len(), 1);
        let only = &r.strata["6-12m"];
        assert_eq!(only.counts, r.counts);
        assert_eq!(only.f1, r.f1);

        let two = [sample(1, "6-12m"), sample(0, "6-12m"), sample(1, ">24m"), sample(1, ">24m")];
        let refs: Vec<_> = two.iter().collect();
        let r = stratify_by_bucket(&[1, 0, 0, 1], &refs).unwrap();
        assert_eq!(r.strata["6-12m"].counts, ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
        assert_eq!(r.strata[">24m"].counts, ConfusionCounts { tp: 1, fp: 0, tn: 0, fn_: 1 });
        assert_eq!(r.strata[">24m"].recall, 0.5);
    }

    #[test]
    fn seed_aggregation() {
        let mut a = MetricsReport::from_counts(ConfusionCounts { tp: 1, fp: 0, tn: 1, fn_: 0 });
        let mut b = a.clone();
        a.f1 = 70.0;
        b.f1 = 80.0;
        let agg = aggregate_seeds(&[a.clone(), b.clone()]).unwrap();
        let f1 = agg.seeds.as_ref().unwrap().f1;
        assert_eq!((f1.mean, f1.std), (75.0, 5.0));
        assert_eq!(agg, aggregate_seeds(&[b, a.clone()]).unwrap());
        let single = aggregate_seeds(&[a]).unwrap();
        assert_eq!(single.seeds.unwrap().f1.std, 0.0);
        let three = mean_std(&[2.0, 4.0, 9.0]);
        assert_eq!(three.mean, 5.0);
        assert!((three.std - (26.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn table_and_records() {
        let r = compute_metrics(&[1, 1, 0, 1], &[1, 0, 0, 1]).unwrap();
        let agg = aggregate_seeds(&[r.clone(), r.clone()]).unwrap();
        let t = render_table(&[("grpo_grpo".into(), &r), ("grpo_stage2_only".into(), &agg)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].contains("80.00"));
        assert!(lines[3].contains("80.00 ± 0.00"));
        assert!(lines.iter().all(|l| l.chars().count() == lines[0].chars().count()));
        let recs = stratum_records("x", &r);
        assert_eq!(recs.len(), 1);
        let text = records_to_jsonl(&recs);
        assert!(text.contains("\"fn\":0"));
        let back: StratumRecord = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, recs[0]);
    }

    proptest! {
        #[test]
        fn f1_matches_counts(pairs in prop::collection::vec((0u8..=1, 0u8..=1), 1..200)) {
            let (p, l): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let r = compute_metrics(&p, &l).unwrap();
            prop_assert_eq!(r.counts.total(), p.len() as u64);
            let c = r.counts;
            let prec = if c.tp + c.fp == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
            let rec = if c.tp + c.fn_ == 0 { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
            let f1 = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
            prop_assert!((r.f1 - f1).abs() < 1e-9);
        }

        #[test]
        fn strata_partition_counts(rows in prop::collection::vec((0u8..=1, 0u8..=1, 0usize..4), 1..100)) {
            let buckets = ["<6m", "6-12m", "12-18m", ">24m"];
            let samples: Vec<_> = rows.iter().map(|(_, l, b)| sample(*l, buckets[*b])).collect();
            let refs: Vec<_> = samples.iter().collect();
            let preds: Vec<u8> = rows.iter().map(|r| r.0).collect();
            let r = stratify_by_bucket(&preds, &refs).unwrap();
            let mut sum = ConfusionCounts::default();
            for s in r.strata.values() {
                prop_assert!(s.counts.total() > 0);
                sum.merge(&s.counts);
            }
            prop_assert_eq!(sum, r.counts);
        }

        #[test]
        fn zero_delta_is_exact_accuracy(v in prop::collection::vec((0u8..5, 0u8..5), 1..50)) {
            let p: Vec<f64> = v.iter().map(|x| f64::from(x.0)).collect();
            let t: Vec<f64> = v.iter().map(|x| f64::from(x.1)).collect();
            let exact = v.iter().filter(|x| x.0 == x.1).count() as f64 / v.len() as f64;
            prop_assert_eq!(index_accuracy(&p, &t, 0.0).unwrap(), exact);
        }

        #[test]
        fn aggregate_is_permutation_invariant(f1s in prop::collection::vec(0.0f64..1.0, 1..8), rot in 0usize..8) {
            let reports: Vec<MetricsReport> = f1s.iter().map(|f| {
                let mut r = MetricsReport::from_counts(ConfusionCounts { tp: 1, fp: 1, tn: 1, fn_: 1 });
                r.f1 = *f;
                r
            }).collect();
            let mut rotated = reports.clone();
            rotated.rotate_left(rot % reports.len());
            let a = aggregate_seeds(&reports).unwrap();
            let b = aggregate_seeds(&rotated).unwrap();
            prop_assert!((a.f1 - b.f1).abs() < 1e-12);
            let (sa, sb) = (a.seeds.unwrap().f1.std, b.seeds.unwrap().f1.std);
            prop_assert!((sa - sb).abs() < 1e-12);
        }
    }
}
