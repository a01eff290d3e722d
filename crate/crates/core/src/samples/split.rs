use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{LongitudinalSample, Stage};
use crate::error::{Error, Result};
use crate::rng;

pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<LongitudinalSample>,
    pub removed: Vec<LongitudinalSample>,
}

/// Keep samples whose prompt measures at most `max_units`.
pub fn filter_by_length(
    samples: Vec<LongitudinalSample>,
    max_units: usize,
    length_fn: &dyn Fn(&str) -> usize,
) -> FilterOutcome {
    let (kept, removed) = samples.into_iter().partition(|s| length_fn(&s.prompt_text) <= max_units);
    FilterOutcome { kept, removed }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalancingRecord {
    pub before: ClassCounts,
    pub after: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub stage: Stage,
    #[serde(rename = "train_ids")]
    pub train_patient_ids: Vec<String>,
    #[serde(rename = "test_ids")]
    pub test_patient_ids: Vec<String>,
    pub train_samples: Vec<String>,
    pub test_samples: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balancing_record: Option<BalancingRecord>,
}

impl SplitManifest {
    pub fn train_ids(&self) -> BTreeSet<&str> {
        self.train_patient_ids.iter().map(String::as_str).collect()
    }

    pub fn test_ids(&self) -> BTreeSet<&str> {
        self.test_patient_ids.iter().map(String::as_str).collect()
    }
}

/// Patient-level split. Patient IDs are sorted, shuffled with the stream
/// `split/<stage>` of `seed`, and the first `round(n * test_ratio)` go to
/// test. Samples follow their patient and keep their input order.
pub fn split_patients(stage: Stage, samples: &[LongitudinalSample], test_ratio: f64, seed: u64) -> SplitManifest {
    let ratio = test_ratio.clamp(0.0, 1.0);
    let mut ids: Vec<&str> =
        samples.iter().map(|s| s.patient_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = rng::stream(seed, &format!("split/{stage}"));
    ids.shuffle(&mut rng);
    let n_test = (ids.len() as f64 * ratio).round() as usize;
    let test: BTreeSet<&str> = ids[..n_test].iter().copied().collect();
    let train: BTreeSet<&str> = ids[n_test..].iter().copied().collect();

    let (test_samples, train_samples): (Vec<_>, Vec<_>) =
        samples.iter().partition(|s| test.contains(s.patient_id.as_str()));
    SplitManifest {
        stage,
        train_patient_ids: train.into_iter().map(String::from).collect(),
        test_patient_ids: test.into_iter().map(String::from).collect(),
        train_samples: train_samples.into_iter().map(|s| s.sample_id.clone()).collect(),
        test_samples: test_samples.into_iter().map(|s| s.sample_id.clone()).collect(),
        balancing_record: None,
    }
}

fn class_counts(samples: &[LongitudinalSample]) -> ClassCounts {
    let positive = samples.iter().filter(|s| s.label() == 1).count();
    ClassCounts { positive, negative: samples.len() - positive }
}

/// Downsample the majority class to the minority count. The survivors keep
/// their input order.
pub fn balance_training(
    train_samples: &[LongitudinalSample],
    seed: u64,
) -> Result<(Vec<LongitudinalSample>, BalancingRecord)> {
    let before = class_counts(train_samples);
    if before.positive == 0 || before.negative == 0 {
        return Err(Error::Balancing(format!(
            "need both classes, got {} positive / {} negative",
            before.positive, before.negative
        )));
    }
    let target = before.positive.min(before.negative);
    let majority_label = u8::from(before.positive > before.negative);
    let mut majority: Vec<usize> =
        train_samples.iter().enumerate().filter(|(_, s)| s.label() == majority_label).map(|(i, _)| i).collect();
    let mut rng = rng::stream(seed, "balance");
    majority.shuffle(&mut rng);
    let dropped: BTreeSet<usize> = majority[target..].iter().copied().collect();
    let kept: Vec<LongitudinalSample> =
        train_samples.iter().enumerate().filter(|(i, _)| !dropped.contains(i)).map(|(_, s)| s.clone()).collect();
    let after = class_counts(&kept);
    Ok((kept, BalancingRecord { before, after }))
}

/// Reduce `samples` to about `cap` entries with per-task shares
/// proportional to the input (largest-remainder rounding).
pub fn stratified_subsample(samples: &[LongitudinalSample], cap: usize, seed: u64) -> Vec<LongitudinalSample> {
    if samples.len() <= cap {
        return samples.to_vec();
    }
    let mut by_task: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_task.entry(s.task.as_str()).or_default().push(i);
    }
    let total = samples.len() as f64;
    let mut quotas: Vec<(&str, usize, f64)> = by_task
        .iter()
        .map(|(t, idx)| {
            let exact = idx.len() as f64 * cap as f64 / total;
            (*t, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut remaining = cap - quotas.iter().map(|q| q.1).sum::<usize>();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(a.cmp(&b)));
    for i in order {
        if remaining == 0 {
            break;
        }
        quotas[i].1 += 1;
        remaining -= 1;
    }

    let mut rng = rng::stream(seed, "subsample/stage1-test");
    let mut chosen = BTreeSet::new();
    for (task, quota, _) in quotas {
        let mut idx = by_task[task].clone();
        idx.shuffle(&mut rng);
        chosen.extend(idx.into_iter().take(quota));
    }
    chosen.into_iter().map(|i| samples[i].clone()).collect()
}
