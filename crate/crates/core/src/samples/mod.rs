//! Longitudinal sample construction.
//!
//! Stage 1 emits one index-forecasting sample per (patient, visit, task)
//! where the visit records the task index and at least one earlier visit
//! exists; the prompt is the log of all earlier visits. Stage 2 emits at
//! most one diagnosis sample per patient: the anchor is the last visit,
//! the history stops at a per-patient horizon before the anchor, and
//! samples whose gap is shorter than the minimum are dropped.
//!
//! [`prepare_datasets`] runs the whole protocol: stage-2 split first,
//! stage-2 test patients removed from the stage-1 corpus, length filtering,
//! patient-level splits, balancing of the stage-2 training side and the
//! leakage audit.

mod audit;
mod gap;
mod linearize;
mod split;

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use audit::{audit_leakage, AuditReport};
pub use gap::{assign_gap_bucket, months_between, GapScheme, SchemeId, DAYS_PER_MONTH};
pub use linearize::{
    format_value, linearize_history, linearize_visit, parse_history, parse_visit_line, scan_dates, ParsedVisit,
};
pub use split::{
    balance_training, filter_by_length, split_patients, stratified_subsample, whitespace_tokens, BalancingRecord,
    ClassCounts, FilterOutcome, SplitManifest,
};

use crate::cohort::{Cohort, Patient};
use crate::error::{Error, Result};
use crate::rng::fnv1a64;
use crate::scales::{Profile, DIAGNOSIS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "stage1" => Ok(Stage::Stage1),
            "2" | "stage2" => Ok(Stage::Stage2),
            other => Err(Error::Config(format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalSample {
    pub sample_id: String,
    pub patient_id: String,
    pub stage: Stage,
    /// Index name, or `"diagnosis"` for stage 2.
    pub task: String,
    pub prompt_text: String,
    pub anchor_date: NaiveDate,
    pub target: f64,
    pub gap_months: f64,
    pub gap_bucket: String,
}

impl LongitudinalSample {
    pub fn label(&self) -> u8 {
        u8::from(self.target >= 0.5)
    }
}

pub fn build_stage1_samples(cohort: &Cohort, scheme: &GapScheme, tasks: &[String]) -> Result<Vec<LongitudinalSample>> {
    let mut out = Vec::new();
    for patient in &cohort.patients {
        for k in 1..patient.visits.len() {
            let anchor = &patient.visits[k];
            let history = &patient.visits[..k];
            let gap_months = months_between(history[k - 1].date, anchor.date);
            let gap_bucket = scheme.assign(gap_months)?;
            let mut prompt: Option<String> = None;
            for task in tasks {
                let Some(&target) = anchor.observations.get(task) else {
                    continue;
                };
                let prompt_text = prompt.get_or_insert_with(|| linearize_history(history)).clone();
                out.push(LongitudinalSample {
                    sample_id: format!("{}-s1-v{}-{}", patient.patient_id, k + 1, task),
                    patient_id: patient.patient_id.clone(),
                    stage: Stage::Stage1,
                    task: task.clone(),
                    prompt_text,
                    anchor_date: anchor.date,
                    target,
                    gap_months,
                    gap_bucket: gap_bucket.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// How far before the anchor a stage-2 history is cut.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Options {
    /// Samples with a shorter gap are dropped.
    pub min_gap_months: f64,
    /// Candidate cut-off horizons in months. Each patient gets
    /// `horizons[fnv1a64(patient_id) % len]`; the history keeps the visits
    /// at least that far before the anchor.
    pub horizons: Vec<f64>,
}

impl Default for Stage2Options {
    fn default() -> Self {
        Stage2Options { min_gap_months: 6.0, horizons: vec![6.0, 12.0, 18.0, 24.0] }
    }
}

impl Stage2Options {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::Config("stage-2 horizons must be non-empty".into()));
        }
        if self.horizons.iter().chain([&self.min_gap_months]).any(|h| !h.is_finite() || *h < 0.0) {
            return Err(Error::Config("stage-2 horizons and min gap must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn horizon_for(&self, patient_id: &str) -> f64 {
        let i = (fnv1a64(patient_id.as_bytes()) % self.horizons.len() as u64) as usize;
        self.horizons[i]
    }
}

fn stage2_sample(patient: &Patient, scheme: &GapScheme, options: &Stage2Options) -> Result<Option<LongitudinalSample>> {
    let Some(anchor) = patient.visits.last() else {
        return Ok(None);
    };
    let horizon = options.horizon_for(&patient.patient_id);
    let history: Vec<_> = patient
        .visits
        .iter()
        .take_while(|v| v.date < anchor.date && months_between(v.date, anchor.date) >= horizon)
        .cloned()
        .collect();
    let Some(last) = history.last() else {
        return Ok(None);
    };
    let gap_months = months_between(last.date, anchor.date);
    if gap_months < options.min_gap_months {
        return Ok(None);
    }
    Ok(Some(LongitudinalSample {
        sample_id: format!("{}-s2", patient.patient_id),
        patient_id: patient.patient_id.clone(),
        stage: Stage::Stage2,
        task: DIAGNOSIS.to_string(),
        prompt_text: linearize_history(&history),
        anchor_date: anchor.date,
        target: f64::from(patient.final_label),
        gap_months,
        gap_bucket: scheme.assign(gap_months)?,
    }))
}

pub fn build_stage2_samples(
    cohort: &Cohort,
    scheme: &GapScheme,
    options: &Stage2Options,
) -> Result<Vec<LongitudinalSample>> {
    options.validate()?;
    let mut out = Vec::new();
    for patient in &cohort.patients {
        out.extend(stage2_sample(patient, scheme, options)?);
    }
    Ok(out)
}

pub fn write_samples<W: Write>(samples: &[LongitudinalSample], mut out: W) -> std::io::Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_samples<R: BufRead>(input: R) -> Result<Vec<LongitudinalSample>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse(format!("sample line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("sample line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Parameters of the full sample-construction protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub test_ratio: f64,
    pub max_len: usize,
    /// Stage-1 target indices; empty means every profile index.
    pub stage1_tasks: Vec<String>,
    pub stage2: Stage2Options,
    /// Task-stratified cap on the stage-1 test split.
    pub stage1_test_cap: Option<usize>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            test_ratio: 0.2,
            max_len: 8000,
            stage1_tasks: Vec::new(),
            stage2: Stage2Options::default(),
            stage1_test_cap: None,
        }
    }
}

impl BuildConfig {
    pub fn tasks_for(&self, profile: Profile) -> Vec<String> {
        if self.stage1_tasks.is_empty() {
            profile.indices().iter().map(|s| s.name.to_string()).collect()
        } else {
            self.stage1_tasks.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FilterCounts {
    pub stage: Stage,
    pub kept: usize,
    pub removed: usize,
}

/// Output of [`prepare_datasets`]. Sample vectors hold every kept sample
/// of a stage; the manifests say which side each one is on.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub profile: Profile,
    pub stage1_samples: Vec<LongitudinalSample>,
    pub stage2_samples: Vec<LongitudinalSample>,
    pub stage1_manifest: SplitManifest,
    pub stage2_manifest: SplitManifest,
    pub filter_counts: Vec<FilterCounts>,
    pub audit: AuditReport,
}

impl Datasets {
    fn select<'a>(samples: &'a [LongitudinalSample], ids: &[String]) -> Vec<&'a LongitudinalSample> {
        let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        samples.iter().filter(|s| wanted.contains(s.sample_id.as_str())).collect()
    }

    pub fn stage1_train(&self) -> Vec<&LongitudinalSample> {
        Self::select(&self.stage1_samples, &self.stage1_manifest.train_samples)
    }

    pub fn stage1_test(&self) -> Vec<&LongitudinalSample> {
        Self::select(&self.stage1_samples, &self.stage1_manifest.test_samples)
    }

    pub fn stage2_train(&self) -> Vec<&LongitudinalSample> {
        Self::select(&self.stage2_samples, &self.stage2_manifest.train_samples)
    }

    pub fn stage2_test(&self) -> Vec<&LongitudinalSample> {
        Self::select(&self.stage2_samples, &self.stage2_manifest.test_samples)
    }

    /// Re-run the audit over the current manifests.
    pub fn reaudit(&self) -> AuditReport {
        let all: Vec<LongitudinalSample> = self.stage1_samples.iter().chain(&self.stage2_samples).cloned().collect();
        audit_leakage(&self.stage1_manifest, &self.stage2_manifest, &all)
    }
}

pub fn prepare_datasets_with(
    cohort: &Cohort,
    config: &BuildConfig,
    seed: u64,
    length_fn: &dyn Fn(&str) -> usize,
) -> Result<Datasets> {
    if !(0.0..=1.0).contains(&config.test_ratio) {
        return Err(Error::Config(format!("test_ratio {} outside [0, 1]", config.test_ratio)));
    }
    let profile = cohort.profile;

    let stage2_all = build_stage2_samples(cohort, &GapScheme::standard(SchemeId::stage2(profile)), &config.stage2)?;
    let stage2 = filter_by_length(stage2_all, config.max_len, length_fn);
    let mut m2 = split_patients(Stage::Stage2, &stage2.kept, config.test_ratio, seed);
    let train2: Vec<LongitudinalSample> =
        Datasets::select(&stage2.kept, &m2.train_samples).into_iter().cloned().collect();
    let (balanced, record) = balance_training(&train2, seed)?;
    m2.train_samples = balanced.iter().map(|s| s.sample_id.clone()).collect();
    m2.balancing_record = Some(record);

    let held_out = m2.test_ids();
    let pretrain_cohort = Cohort {
        profile,
        patients: cohort.patients.iter().filter(|p| !held_out.contains(p.patient_id.as_str())).cloned().collect(),
    };
    let stage1_all = build_stage1_samples(
        &pretrain_cohort,
        &GapScheme::standard(SchemeId::stage1(profile)),
        &config.tasks_for(profile),
    )?;
    let stage1 = filter_by_length(stage1_all, config.max_len, length_fn);
    let mut m1 = split_patients(Stage::Stage1, &stage1.kept, config.test_ratio, seed);
    if let Some(cap) = config.stage1_test_cap {
        let test: Vec<LongitudinalSample> =
            Datasets::select(&stage1.kept, &m1.test_samples).into_iter().cloned().collect();
        m1.test_samples = stratified_subsample(&test, cap, seed).into_iter().map(|s| s.sample_id.clone()).collect();
    }

    let filter_counts = vec![
        FilterCounts { stage: Stage::Stage1, kept: stage1.kept.len(), removed: stage1.removed.len() },
        FilterCounts { stage: Stage::Stage2, kept: stage2.kept.len(), removed: stage2.removed.len() },
    ];
    let mut ds = Datasets {
        profile,
        stage1_samples: stage1.kept,
        stage2_samples: stage2.kept,
        stage1_manifest: m1,
        stage2_manifest: m2,
        filter_counts,
        audit: AuditReport::default(),
    };
    ds.audit = ds.reaudit();
    Ok(ds)
}

/// [`prepare_datasets_with`] using whitespace token counts.
pub fn prepare_datasets(cohort: &Cohort, config: &BuildConfig, seed: u64) -> Result<Datasets> {
    prepare_datasets_with(cohort, config, seed, &whitespace_tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortConfig, Visit};
    use std::collections::BTreeMap;

    fn visit(date: &str, obs: &[(&str, f64)]) -> Visit {
        Visit {
            date: date.parse().unwrap(),
            observations: obs.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
        }
    }

    fn one_patient(visits: Vec<Visit>, label: u8) -> Cohort {
        Cohort {
            profile: Profile::Amc,
            patients: vec![Patient { patient_id: "P1".into(), final_label: label, visits, trajectory: vec![] }],
        }
    }

    fn s1() -> GapScheme {
        GapScheme::standard(SchemeId::Stage1Amc)
    }

    fn s2() -> GapScheme {
        GapScheme::standard(SchemeId::Stage2Amc)
    }

    #[test]
    fn single_visit_gives_no_stage1_samples() {
        let c = one_patient(vec![visit("2020-01-01", &[("MMSE", 27.0)])], 0);
        assert!(build_stage1_samples(&c, &s1(), &["MMSE".into()]).unwrap().is_empty());
    }

    #[test]
    fn three_visits_two_mmse_samples() {
        let c = one_patient(
            vec![
                visit("2020-01-01", &[("MMSE", 27.0)]),
                visit("2020-03-01", &[("MMSE", 25.0)]),
                visit("2020-06-01", &[("MMSE", 22.0)]),
            ],
            0,
        );
        let out = build_stage1_samples(&c, &s1(), &["MMSE".into()]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].target, 25.0);
        assert_eq!(out[0].gap_months, 2.0);
        assert_eq!(out[0].gap_bucket, "2-3m");
        assert_eq!(out[0].prompt_text, "2020-01-01: <<<VISIT 1/1>>> MMSE: 27");
        assert_eq!(out[1].target, 22.0);
        assert_eq!(out[1].prompt_text.lines().count(), 2);
        assert_eq!(out[1].gap_bucket, "3-4m");
    }

    #[test]
    fn anchor_never_in_prompt() {
        let cohort = generate_cohort(&CohortConfig { n_patients: 100, seed: 2, ..Default::default() }).unwrap();
        let tasks: Vec<String> = ["CDR", "GDS", "MMSE"].iter().map(|s| s.to_string()).collect();
        let samples = build_stage1_samples(&cohort, &s1(), &tasks).unwrap();
        assert!(!samples.is_empty());
        for s in &samples {
            let anchor = s.anchor_date.format("%Y-%m-%d").to_string();
            assert!(!s.prompt_text.contains(&anchor), "{}", s.sample_id);
            assert!(scan_dates(&s.prompt_text).iter().all(|d| *d < s.anchor_date));
        }
    }

    #[test]
    fn stage2_short_gap_excluded() {
        let c = one_patient(vec![visit("2020-01-01", &[("MMSE", 27.0)]), visit("2020-05-01", &[("MMSE", 20.0)])], 1);
        let opts = Stage2Options { min_gap_months: 6.0, horizons: vec![0.0] };
        assert!(build_stage2_samples(&c, &s2(), &opts).unwrap().is_empty());
    }

    #[test]
    fn stage2_seven_month_gap() {
        let c = one_patient(vec![visit("2020-01-01", &[("MMSE", 27.0)]), visit("2020-08-01", &[("MMSE", 20.0)])], 1);
        let out = build_stage2_samples(&c, &s2(), &Stage2Options { min_gap_months: 6.0, horizons: vec![6.0] }).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].gap_months, 7.0);
        assert_eq!(out[0].gap_bucket, "6-12m");
        assert_eq!(out[0].target, 1.0);
        assert_eq!(out[0].task, DIAGNOSIS);
    }

    #[test]
    fn stage2_history_respects_horizon() {
        let c = one_patient(
            vec![
                visit("2019-01-01", &[("MMSE", 29.0)]),
                visit("2019-07-01", &[("MMSE", 28.0)]),
                visit("2020-03-01", &[("MMSE", 26.0)]),
                visit("2020-08-01", &[("MMSE", 20.0)]),
            ],
            1,
        );
        let opts = Stage2Options { min_gap_months: 6.0, horizons: vec![12.0] };
        let out = build_stage2_samples(&c, &s2(), &opts).unwrap();
        assert_eq!(out[0].gap_months, 13.0);
        assert_eq!(out[0].gap_bucket, "12-18m");
        assert_eq!(out[0].prompt_text.lines().count(), 2);
    }

    #[test]
    fn stage2_empty_cohort() {
        let c = Cohort { profile: Profile::Amc, patients: vec![] };
        assert!(build_stage2_samples(&c, &s2(), &Stage2Options::default()).unwrap().is_empty());
    }

    #[test]
    fn stage2_gaps_at_least_six_months() {
        let cohort = generate_cohort(&CohortConfig { n_patients: 300, seed: 5, ..Default::default() }).unwrap();
        let out = build_stage2_samples(&cohort, &s2(), &Stage2Options::default()).unwrap();
        assert!(out.len() > 100);
        let buckets: BTreeSet<&str> = out.iter().map(|s| s.gap_bucket.as_str()).collect();
        assert!(buckets.len() >= 3, "{buckets:?}");
        for s in &out {
            assert!(s.gap_months >= 6.0);
            assert!(scan_dates(&s.prompt_text).iter().all(|d| *d < s.anchor_date));
        }
    }

    #[test]
    fn protocol_passes_audit_and_isolates_test_patients() {
        let cohort = generate_cohort(&CohortConfig { n_patients: 400, seed: 9, ..Default::default() }).unwrap();
        let ds = prepare_datasets(&cohort, &BuildConfig::default(), 9).unwrap();
        assert!(ds.audit.passed(), "{:?}", ds.audit);
        let test2: BTreeSet<&str> = ds.stage2_manifest.test_ids();
        assert!(ds.stage1_samples.iter().all(|s| !test2.contains(s.patient_id.as_str())));
        let rec = ds.stage2_manifest.balancing_record.as_ref().unwrap();
        assert_eq!(rec.after.positive, rec.after.negative);
        let train = ds.stage2_train();
        let pos = train.iter().filter(|s| s.label() == 1).count();
        assert_eq!(pos * 2, train.len());
    }

    #[test]
    fn sample_jsonl_round_trip() {
        let cohort = generate_cohort(&CohortConfig { n_patients: 10, seed: 1, ..Default::default() }).unwrap();
        let samples = build_stage2_samples(&cohort, &s2(), &Stage2Options::default()).unwrap();
        let mut buf = Vec::new();
        write_samples(&samples, &mut buf).unwrap();
        assert_eq!(read_samples(buf.as_slice()).unwrap(), samples);
    }
}
