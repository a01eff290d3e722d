use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{scan_dates, LongitudinalSample, SplitManifest};

/// Leakage audit result. Passing means every list is empty.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Stage-2 test patients that appear anywhere in the stage-1 corpus.
    pub stage2_test_in_stage1: Vec<String>,
    /// Patients on both sides of the stage-2 split.
    pub stage2_test_in_stage2_train: Vec<String>,
    /// Patients on both sides of the stage-1 split.
    pub stage1_test_in_stage1_train: Vec<String>,
    /// Samples whose prompt mentions a date on or after the anchor.
    pub future_dated_samples: Vec<String>,
    /// Manifest entries with no matching sample.
    pub unknown_samples: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.stage2_test_in_stage1.is_empty()
            && self.stage2_test_in_stage2_train.is_empty()
            && self.stage1_test_in_stage1_train.is_empty()
            && self.future_dated_samples.is_empty()
            && self.unknown_samples.is_empty()
    }

    pub fn violation_count(&self) -> usize {
        self.stage2_test_in_stage1.len()
            + self.stage2_test_in_stage2_train.len()
            + self.stage1_test_in_stage1_train.len()
            + self.future_dated_samples.len()
            + self.unknown_samples.len()
    }
}

/// Check both manifests against each other and every referenced prompt
/// against its anchor date.
pub fn audit_leakage(stage1: &SplitManifest, stage2: &SplitManifest, samples: &[LongitudinalSample]) -> AuditReport {
    let s2_test = stage2.test_ids();
    let s1_all: BTreeSet<&str> = stage1.train_ids().union(&stage1.test_ids()).copied().collect();

    let by_id: BTreeMap<&str, &LongitudinalSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();

    let mut future = BTreeSet::new();
    let mut unknown = BTreeSet::new();
    let mut s1_patients_from_samples = BTreeSet::new();
    let manifests = [(stage1, true), (stage2, false)];
    for (manifest, is_stage1) in manifests {
        for id in manifest.train_samples.iter().chain(&manifest.test_samples) {
            let Some(sample) = by_id.get(id.as_str()) else {
                unknown.insert(id.clone());
                continue;
            };
            if is_stage1 {
                s1_patients_from_samples.insert(sample.patient_id.as_str());
            }
            if scan_dates(&sample.prompt_text).iter().any(|d| *d >= sample.anchor_date) {
                future.insert(id.clone());
            }
        }
    }

    let owned = |set: BTreeSet<&str>| set.into_iter().map(String::from).collect::<Vec<_>>();
    let s1_union: BTreeSet<&str> = s1_all.union(&s1_patients_from_samples).copied().collect();
    AuditReport {
        stage2_test_in_stage1: owned(s2_test.intersection(&s1_union).copied().collect()),
        stage2_test_in_stage2_train: owned(s2_test.intersection(&stage2.train_ids()).copied().collect()),
        stage1_test_in_stage1_train: owned(stage1.test_ids().intersection(&stage1.train_ids()).copied().collect()),
        future_dated_samples: future.into_iter().collect(),
        unknown_samples: unknown.into_iter().collect(),
    }
}
