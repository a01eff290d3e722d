//! Stage 1 (cold start on index forecasting) and stage 2 (diagnosis
//! fine-tuning), the ablation arms and the multi-seed experiment.
//!
//! One master seed drives a run. The cohort and the splits come from
//! `derive_seed(master, "data")`, so every arm and training seed sees the
//! same data. Training seed `k` is `derive_seed(master, "train/{k}")`; it
//! seeds the policy initialization (shared by the arms, so a fresh stage 2
//! and stage 1 start from identical weights) and, through further labels,
//! each stage's rollouts.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{generate_cohort, CohortConfig};
use crate::config::{self, Settings};
use crate::error::{Error, Result};
use crate::eval::{self, MetricsReport};
use crate::grpo::{self, GrpoConfig, OptimizerKind, StepRecord, TrainExample};
use crate::policy::{featurize, write_checkpoint, Checkpoint, PolicyConfig, PolicyParams};
use crate::reward::{r_cold, RewardRule, ToleranceProfile};
use crate::rng::derive_seed;
use crate::samples::{prepare_datasets, AuditReport, BuildConfig, Datasets, LongitudinalSample};
use crate::scales::Profile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    GrpoGrpo,
    GrpoStage2Only,
    GrpoStage1Only,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::GrpoGrpo, Arm::GrpoStage2Only, Arm::GrpoStage1Only];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::GrpoGrpo => "grpo_grpo",
            Arm::GrpoStage2Only => "grpo_stage2_only",
            Arm::GrpoStage1Only => "grpo_stage1_only",
        }
    }

    pub fn uses_stage1(self) -> bool {
        self != Arm::GrpoStage2Only
    }

    pub fn uses_stage2(self) -> bool {
        self != Arm::GrpoStage1Only
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL.into_iter().find(|a| a.as_str() == s.trim()).ok_or_else(|| Error::Config(format!("unknown arm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub arms: Vec<Arm>,
    pub seed: u64,
    pub n_seeds: usize,
    /// The cohort block; its seed is replaced by the derived data seed.
    pub cohort: CohortConfig,
    pub build: BuildConfig,
    pub policy: PolicyConfig,
    pub stage1: GrpoConfig,
    pub stage2: GrpoConfig,
}

/// Both stages default to Adam at 0.003. Plain SGD at comparable step
/// sizes collapses to input-independent answers within a few hundred
/// steps on the default cohort.
impl Default for Recipe {
    fn default() -> Self {
        Recipe {
            arms: vec![Arm::GrpoGrpo, Arm::GrpoStage2Only],
            seed: 0,
            n_seeds: 5,
            cohort: CohortConfig::default(),
            build: BuildConfig { stage1_test_cap: Some(2000), ..Default::default() },
            policy: PolicyConfig::default(),
            stage1: GrpoConfig { lr: 0.003, optimizer: OptimizerKind::Adam, ..Default::default() },
            stage2: GrpoConfig { lr: 0.003, optimizer: OptimizerKind::Adam, ..Default::default() },
        }
    }
}

impl Recipe {
    /// Every recipe key with its default value.
    pub fn default_settings() -> Settings {
        Recipe::default().to_settings()
    }

    pub fn to_settings(&self) -> Settings {
        let mut s = Settings::new();
        s.set("arms", self.arms.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(","));
        s.set("seed", self.seed);
        s.set("seeds", self.n_seeds);
        config::cohort_settings(&self.cohort, &mut s);
        config::build_settings(&self.build, &mut s);
        config::policy_settings(&self.policy, &mut s);
        config::grpo_settings("stage1", &self.stage1, &mut s);
        config::grpo_settings("stage2", &self.stage2, &mut s);
        s
    }

    pub fn from_settings(s: &Settings) -> Result<Self> {
        let arms: Vec<Arm> = s.list("arms")?;
        if arms.is_empty() {
            return Err(Error::Config("recipe lists no arms".into()));
        }
        let seed: u64 = s.value("seed")?;
        let n_seeds: usize = s.value("seeds")?;
        if n_seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        Ok(Recipe {
            arms,
            seed,
            n_seeds,
            cohort: config::cohort_from(s, derive_seed(seed, "data"))?,
            build: config::build_from(s)?,
            policy: config::policy_from(s)?,
            stage1: config::grpo_from(s, "stage1", 0)?,
            stage2: config::grpo_from(s, "stage2", 0)?,
        })
    }

    pub fn profile(&self) -> Profile {
        self.cohort.profile
    }

    pub fn data_seed(&self) -> u64 {
        derive_seed(self.seed, "data")
    }

    pub fn training_seeds(&self) -> Vec<u64> {
        (0..self.n_seeds).map(|k| derive_seed(self.seed, &format!("train/{k}"))).collect()
    }
}

/// Featurized queries of one stage.
#[derive(Debug, Clone)]
pub struct StageData {
    pub train: Vec<TrainExample>,
    pub test: Vec<TrainExample>,
    pub test_samples: Vec<LongitudinalSample>,
}

/// Everything the training stages read, built once per experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub profile: Profile,
    pub tolerances: ToleranceProfile,
    pub audit: AuditReport,
    pub stage1: StageData,
    pub stage2: StageData,
}

fn examples(
    samples: &[&LongitudinalSample],
    profile: Profile,
    tolerances: &ToleranceProfile,
) -> Result<Vec<TrainExample>> {
    let layout = PolicyParams::zeros(profile, 0)?;
    samples
        .iter()
        .map(|s| {
            Ok(TrainExample {
                sample_id: s.sample_id.clone(),
                head: layout.head_index(&s.task)?,
                features: featurize(s, profile)?.values,
                target: s.target,
                rule: RewardRule::for_task(&s.task, tolerances)?,
            })
        })
        .collect()
}

impl Prepared {
    pub fn new(data: &Datasets) -> Result<Self> {
        let profile = data.profile;
        let tolerances = ToleranceProfile::for_profile(profile);
        let stage = |train: Vec<&LongitudinalSample>, test: Vec<&LongitudinalSample>| -> Result<StageData> {
            Ok(StageData {
                train: examples(&train, profile, &tolerances)?,
                test: examples(&test, profile, &tolerances)?,
                test_samples: test.into_iter().cloned().collect(),
            })
        };
        Ok(Prepared {
            profile,
            audit: data.audit.clone(),
            stage1: stage(data.stage1_train(), data.stage1_test())?,
            stage2: stage(data.stage2_train(), data.stage2_test())?,
            tolerances,
        })
    }

    fn gate(&self) -> Result<()> {
        if self.audit.passed() {
            Ok(())
        } else {
            Err(Error::Leakage(serde_json::to_string(&self.audit).expect("audit serializes")))
        }
    }
}

/// Generate the cohort and run the sample protocol for a recipe.
pub fn prepare_recipe_data(recipe: &Recipe) -> Result<Datasets> {
    let mut cohort_cfg = recipe.cohort.clone();
    cohort_cfg.seed = recipe.data_seed();
    let cohort = generate_cohort(&cohort_cfg)?;
    prepare_datasets(&cohort, &recipe.build, recipe.data_seed())
}

/// Value of the most probable action.
pub fn predict(params: &PolicyParams, example: &TrainExample) -> Result<f64> {
    let dist = params.forward(example.head, &example.features)?.dist;
    Ok(params.space(example.head).actions[dist.argmax()])
}

/// Chance that a uniformly random answer lands within `delta` of the
/// truth, for the least favourable truth (the widest window).
pub fn random_guess_rate(actions: &[f64], delta: f64) -> f64 {
    let best =
        actions.iter().map(|t| actions.iter().filter(|a| r_cold(**a, *t, delta) == 1.0).count()).max().unwrap_or(0);
    best as f64 / actions.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub train: f64,
    pub test: f64,
    pub random_baseline: f64,
}

/// Tolerance accuracy per task (argmax decoding).
pub fn tolerance_accuracy(params: &PolicyParams, data: &[TrainExample]) -> Result<BTreeMap<String, f64>> {
    let mut hits: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for ex in data {
        let value = predict(params, ex)?;
        let r = match ex.rule {
            RewardRule::Tolerance { delta } => r_cold(value, ex.target, delta),
            RewardRule::ExactLabel => f64::from(u8::from(value == ex.target)),
        };
        let e = hits.entry(params.space(ex.head).task.clone()).or_default();
        e.0 += r;
        e.1 += 1;
    }
    Ok(hits.into_iter().map(|(k, (h, n))| (k, h / n as f64)).collect())
}

fn mean_of(map: &BTreeMap<String, f64>) -> f64 {
    if map.is_empty() {
        0.0
    } else {
        map.values().sum::<f64>() / map.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Stage1Run {
    pub params: PolicyParams,
    pub history: Vec<StepRecord>,
    /// Mean test tolerance accuracy over tasks.
    pub curve: Vec<CurvePoint>,
    pub tasks: BTreeMap<String, TaskAccuracy>,
}

fn initial_params(
    prepared: &Prepared,
    policy: &PolicyConfig,
    seed: u64,
    init: Option<&PolicyParams>,
) -> Result<PolicyParams> {
    let fresh = PolicyParams::init(prepared.profile, policy, derive_seed(seed, "policy"))?;
    match init {
        None => Ok(fresh),
        Some(p) if p.same_shape(&fresh) => Ok(p.clone()),
        Some(_) => Err(Error::Checkpoint("initial parameters do not match the profile and policy shape".into())),
    }
}

/// Cold-start training on index forecasting, from `init` or a fresh
/// policy.
pub fn run_stage1(
    prepared: &Prepared,
    policy: &PolicyConfig,
    stage1: &GrpoConfig,
    seed: u64,
    init: Option<&PolicyParams>,
) -> Result<Stage1Run> {
    prepared.gate()?;
    let init = initial_params(prepared, policy, seed, init)?;
    let config = GrpoConfig { seed: derive_seed(seed, "stage1"), ..stage1.clone() };
    let data = &prepared.stage1;
    let mut curve = Vec::new();
    let out = grpo::train(&config, &data.train, init, |step, params| {
        if !data.test.is_empty() {
            curve.push(CurvePoint { step, value: mean_of(&tolerance_accuracy(params, &data.test)?) });
        }
        Ok(())
    })?;
    let train = tolerance_accuracy(&out.params, &data.train)?;
    let test = tolerance_accuracy(&out.params, &data.test)?;
    let tasks = train
        .iter()
        .map(|(task, acc)| {
            let head = out.params.head_index(task)?;
            let delta = prepared.tolerances.tolerance_for(task)?;
            Ok((
                task.clone(),
                TaskAccuracy {
                    train: *acc,
                    test: test.get(task).copied().unwrap_or(0.0),
                    random_baseline: random_guess_rate(&out.params.space(head).actions, delta),
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(Stage1Run { params: out.params, history: out.history, curve, tasks })
}

/// How a binary prediction is read off the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// Argmax of the diagnosis head.
    Diagnosis,
    /// Argmax of the profile's proxy index head, thresholded (the
    /// zero-shot readout of a stage-1-only policy).
    Proxy,
}

pub fn diagnose(params: &PolicyParams, examples: &[TrainExample], readout: Readout) -> Result<Vec<u8>> {
    let (proxy, cut) = params.profile.diagnosis_proxy();
    let proxy_head = params.head_index(proxy)?;
    examples
        .iter()
        .map(|ex| match readout {
            Readout::Diagnosis => Ok(u8::from(predict(params, ex)? >= 0.5)),
            Readout::Proxy => {
                let probe = TrainExample { head: proxy_head, ..ex.clone() };
                Ok(u8::from(predict(params, &probe)? >= cut))
            }
        })
        .collect()
}

/// Stage-2 test metrics with gap-bucket strata.
pub fn stage2_metrics(params: &PolicyParams, data: &StageData, readout: Readout) -> Result<MetricsReport> {
    let preds = diagnose(params, &data.test, readout)?;
    let refs: Vec<&LongitudinalSample> = data.test_samples.iter().collect();
    eval::stratify_by_bucket(&preds, &refs)
}

#[derive(Debug, Clone)]
pub struct Stage2Run {
    pub params: PolicyParams,
    pub history: Vec<StepRecord>,
    /// Test F1 at every evaluation step.
    pub curve: Vec<CurvePoint>,
    pub metrics: MetricsReport,
}

/// Fine-tune on diagnosis from `init`, or from a fresh policy when `None`.
/// The KL reference is the starting policy.
pub fn run_stage2(
    prepared: &Prepared,
    policy: &PolicyConfig,
    stage2: &GrpoConfig,
    seed: u64,
    init: Option<&PolicyParams>,
) -> Result<Stage2Run> {
    prepared.gate()?;
    let data = &prepared.stage2;
    if data.test.is_empty() {
        return Err(Error::Config("stage-2 test split is empty".into()));
    }
    let init = initial_params(prepared, policy, seed, init)?;
    let config = GrpoConfig { seed: derive_seed(seed, "stage2"), ..stage2.clone() };
    let mut curve = Vec::new();
    let out = grpo::train(&config, &data.train, init, |step, params| {
        curve.push(CurvePoint { step, value: stage2_metrics(params, data, Readout::Diagnosis)?.f1 });
        Ok(())
    })?;
    let metrics = stage2_metrics(&out.params, data, Readout::Diagnosis)?;
    Ok(Stage2Run { params: out.params, history: out.history, curve, metrics })
}

/// First evaluated step whose value reaches `threshold`.
pub fn steps_to_threshold(curve: &[CurvePoint], threshold: f64) -> Option<usize> {
    curve.iter().find(|p| p.value >= threshold).map(|p| p.step)
}

/// Median; `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub metrics: MetricsReport,
    pub curve: Vec<CurvePoint>,
    pub params: PolicyParams,
    pub stage1_history: Vec<StepRecord>,
    pub stage2_history: Vec<StepRecord>,
    pub stage1_tasks: BTreeMap<String, TaskAccuracy>,
}

#[derive(Debug, Clone)]
pub struct ArmRun {
    pub arm: Arm,
    pub seed_index: usize,
    pub seed: u64,
    pub outcome: std::result::Result<ArmOutcome, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub succeeded: usize,
    pub failed: usize,
    pub aggregate: Option<MetricsReport>,
    pub median_final_f1: Option<f64>,
}

/// The cold-start comparison. The threshold is the median final F1 of
/// the stage-2-only arm; each warm-started seed's stage-2 curve is scanned
/// for the first step reaching it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCheck {
    pub threshold_f1: f64,
    pub median_final_f1_grpo_grpo: f64,
    pub median_final_f1_stage2_only: f64,
    pub steps_to_threshold: Vec<Option<usize>>,
    /// Seeds that never reach the threshold count as infinite.
    pub median_steps: f64,
    pub stage2_steps: usize,
    pub final_f1_holds: bool,
    pub faster_holds: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub runs: Vec<ArmRun>,
    pub summaries: Vec<ArmSummary>,
    pub ablation: Option<AblationCheck>,
    pub audit: AuditReport,
}

impl ExperimentResult {
    pub fn any_succeeded(&self) -> bool {
        self.runs.iter().any(|r| r.outcome.is_ok())
    }
}

fn run_seed(recipe: &Recipe, prepared: &Prepared, seed_index: usize, seed: u64) -> Vec<ArmRun> {
    let stage1 = recipe
        .arms
        .iter()
        .any(|a| a.uses_stage1())
        .then(|| run_stage1(prepared, &recipe.policy, &recipe.stage1, seed, None));
    recipe
        .arms
        .iter()
        .map(|&arm| {
            let outcome = (|| -> Result<ArmOutcome> {
                let s1 = match (&stage1, arm.uses_stage1()) {
                    (Some(Ok(run)), true) => Some(run),
                    (Some(Err(e)), true) => return Err(Error::Config(format!("stage 1: {e}"))),
                    _ => None,
                };
                let stage1_history = s1.map(|r| r.history.clone()).unwrap_or_default();
                let stage1_tasks = s1.map(|r| r.tasks.clone()).unwrap_or_default();
                if !arm.uses_stage2() {
                    let run = s1.expect("stage-1 arm has a stage-1 run");
                    let metrics = stage2_metrics(&run.params, &prepared.stage2, Readout::Proxy)?;
                    return Ok(ArmOutcome {
                        curve: vec![CurvePoint { step: 0, value: metrics.f1 }],
                        metrics,
                        params: run.params.clone(),
                        stage1_history,
                        stage2_history: Vec::new(),
                        stage1_tasks,
                    });
                }
                let s2 = run_stage2(prepared, &recipe.policy, &recipe.stage2, seed, s1.map(|r| &r.params))?;
                Ok(ArmOutcome {
                    metrics: s2.metrics,
                    curve: s2.curve,
                    params: s2.params,
                    stage1_history,
                    stage2_history: s2.history,
                    stage1_tasks,
                })
            })();
            ArmRun { arm, seed_index, seed, outcome: outcome.map_err(|e| e.to_string()) }
        })
        .collect()
}

/// All arms over all training seeds. Seeds run in parallel; results are
/// ordered by (seed index, arm order in the recipe). A failed arm is
/// recorded and the others proceed.
pub fn run_experiment(recipe: &Recipe) -> Result<ExperimentResult> {
    let datasets = prepare_recipe_data(recipe)?;
    run_experiment_on(recipe, &Prepared::new(&datasets)?)
}

pub fn run_experiment_on(recipe: &Recipe, prepared: &Prepared) -> Result<ExperimentResult> {
    prepared.gate()?;
    let seeds = recipe.training_seeds();
    let runs: Vec<ArmRun> = seeds
        .par_iter()
        .enumerate()
        .map(|(k, &seed)| run_seed(recipe, prepared, k, seed))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    let mut summaries = Vec::new();
    for &arm in &recipe.arms {
        let ok: Vec<&ArmOutcome> =
            runs.iter().filter(|r| r.arm == arm).filter_map(|r| r.outcome.as_ref().ok()).collect();
        let failed = runs.iter().filter(|r| r.arm == arm && r.outcome.is_err()).count();
        let reports: Vec<MetricsReport> = ok.iter().map(|o| o.metrics.clone()).collect();
        summaries.push(ArmSummary {
            arm,
            succeeded: ok.len(),
            failed,
            aggregate: eval::aggregate_seeds(&reports).ok(),
            median_final_f1: median(&reports.iter().map(|r| r.f1).collect::<Vec<_>>()),
        });
    }

    let ablation = ablation_check(&runs, recipe.stage2.steps);
    Ok(ExperimentResult { runs, summaries, ablation, audit: prepared.audit.clone() })
}

pub fn ablation_check(runs: &[ArmRun], stage2_steps: usize) -> Option<AblationCheck> {
    let outcomes = |arm: Arm| -> Vec<&ArmOutcome> {
        runs.iter().filter(|r| r.arm == arm).filter_map(|r| r.outcome.as_ref().ok()).collect()
    };
    let warm = outcomes(Arm::GrpoGrpo);
    let fresh = outcomes(Arm::GrpoStage2Only);
    let finals = |o: &[&ArmOutcome]| median(&o.iter().map(|x| x.metrics.f1).collect::<Vec<_>>());
    let threshold = finals(&fresh)?;
    let warm_final = finals(&warm)?;
    let steps: Vec<Option<usize>> = warm.iter().map(|o| steps_to_threshold(&o.curve, threshold)).collect();
    let as_f64: Vec<f64> = steps.iter().map(|s| s.map_or(f64::INFINITY, |v| v as f64)).collect();
    let median_steps = median(&as_f64)?;
    Some(AblationCheck {
        threshold_f1: threshold,
        median_final_f1_grpo_grpo: warm_final,
        median_final_f1_stage2_only: threshold,
        steps_to_threshold: steps,
        median_steps,
        stage2_steps,
        final_f1_holds: warm_final >= threshold,
        faster_holds: median_steps <= 0.5 * stage2_steps as f64,
    })
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn history_jsonl(history: &[StepRecord]) -> String {
    history.iter().map(|h| serde_json::to_string(h).expect("history serializes") + "\n").collect()
}

pub fn curve_jsonl(curve: &[CurvePoint]) -> String {
    curve.iter().map(|c| serde_json::to_string(c).expect("curve serializes") + "\n").collect()
}

pub fn write_params(path: &Path, params: &PolicyParams, echo: &Settings) -> Result<()> {
    let ckpt = Checkpoint { params: params.clone(), echo: echo.to_map() };
    let mut buf = Vec::new();
    write_checkpoint(&ckpt, &mut buf).map_err(|e| Error::io(path, e))?;
    write(path, buf)
}

/// Text summary: the results table, failures and the ablation check.
pub fn summary_text(result: &ExperimentResult) -> String {
    let rows: Vec<(String, &MetricsReport)> =
        result.summaries.iter().filter_map(|s| s.aggregate.as_ref().map(|a| (s.arm.to_string(), a))).collect();
    let mut out = eval::render_table(&rows);
    for s in &result.summaries {
        if s.failed > 0 {
            out.push_str(&format!("{}: {} of {} seeds failed\n", s.arm, s.failed, s.failed + s.succeeded));
        }
    }
    for r in &result.runs {
        if let Err(e) = &r.outcome {
            out.push_str(&format!("{} seed {}: {e}\n", r.arm, r.seed_index));
        }
    }
    if let Some(a) = &result.ablation {
        let steps: Vec<String> =
            a.steps_to_threshold.iter().map(|s| s.map_or("never".to_string(), |v| v.to_string())).collect();
        out.push_str(&format!(
            "\nthreshold F1 (median final F1 of grpo_stage2_only): {:.2}\n\
             median final F1 of grpo_grpo: {:.2}\n\
             grpo_grpo steps to threshold: [{}], median {} of {} stage-2 steps\n\
             final F1 check: {}\nconvergence check: {}\n",
            100.0 * a.threshold_f1,
            100.0 * a.median_final_f1_grpo_grpo,
            steps.join(", "),
            a.median_steps,
            a.stage2_steps,
            if a.final_f1_holds { "pass" } else { "fail" },
            if a.faster_holds { "pass" } else { "fail" },
        ));
    }
    out
}

/// Per-arm reports, curves, histories, checkpoints and the summary.
pub fn write_experiment(result: &ExperimentResult, echo: &Settings, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut arms: Vec<Arm> = result.runs.iter().map(|r| r.arm).collect();
    arms.dedup();
    arms.sort();
    arms.dedup();
    for arm in arms {
        let mut report = String::new();
        let mut curves = String::new();
        for run in result.runs.iter().filter(|r| r.arm == arm) {
            let Ok(o) = &run.outcome else { continue };
            let name = format!("{arm}/seed{}", run.seed_index);
            report.push_str(&eval::records_to_jsonl(&eval::stratum_records(&name, &o.metrics)));
            for p in &o.curve {
                curves.push_str(
                    &serde_json::to_string(&serde_json::json!({
                        "seed": run.seed_index, "step": p.step, "f1": p.value
                    }))
                    .expect("curve serializes"),
                );
                curves.push('\n');
            }
            let stem = format!("{arm}_seed{}", run.seed_index);
            if !o.stage1_history.is_empty() {
                write(&dir.join(format!("history_{stem}_stage1.jsonl")), history_jsonl(&o.stage1_history))?;
            }
            if !o.stage2_history.is_empty() {
                write(&dir.join(format!("history_{stem}_stage2.jsonl")), history_jsonl(&o.stage2_history))?;
            }
            write_params(&dir.join(format!("{stem}.ckpt")), &o.params, echo)?;
        }
        write(&dir.join(format!("report_{arm}.jsonl")), report)?;
        write(&dir.join(format!("curves_{arm}.jsonl")), curves)?;
    }
    let summary = serde_json::json!({
        "arms": result.summaries,
        "ablation": result.ablation,
        "audit": result.audit,
    });
    write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    write(&dir.join("summary.txt"), summary_text(result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scales;

    fn small_recipe() -> Recipe {
        let mut r = Recipe::default();
        r.cohort.n_patients = 120;
        r.n_seeds = 2;
        r.stage1.steps = 40;
        r.stage1.eval_every = 20;
        r.stage2.steps = 40;
        r.stage2.eval_every = 20;
        r.arms = Arm::ALL.to_vec();
        r
    }

    #[test]
    fn arm_names() {
        for a in Arm::ALL {
            assert_eq!(a.as_str().parse::<Arm>().unwrap(), a);
        }
        assert!(matches!("sft".parse::<Arm>(), Err(Error::Config(_))));
    }

    #[test]
    fn recipe_settings_round_trip() {
        let r = Recipe::default();
        let back = Recipe::from_settings(&r.to_settings()).unwrap();
        assert_eq!(back.arms, r.arms);
        assert_eq!(back.build, r.build);
        assert_eq!(back.stage2.lr, r.stage2.lr);
        let mut s = r.to_settings();
        s.set("arms", "grpo_grpo,unknown");
        assert!(Recipe::from_settings(&s).is_err());
    }

    #[test]
    fn random_guess_rates() {
        let mmse = scales::index("MMSE").unwrap().values();
        assert_eq!(random_guess_rate(&mmse, 2.0), 5.0 / 31.0);
        let cdr = scales::index("CDR").unwrap().values();
        assert_eq!(random_guess_rate(&cdr, 0.0), 1.0 / 5.0);
        assert_eq!(random_guess_rate(&[0.0, 1.0], 0.0), 0.5);
    }

    #[test]
    fn median_and_threshold() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let curve = [
            CurvePoint { step: 0, value: 0.1 },
            CurvePoint { step: 100, value: 0.5 },
            CurvePoint { step: 200, value: 0.7 },
        ];
        assert_eq!(steps_to_threshold(&curve, 0.5), Some(100));
        assert_eq!(steps_to_threshold(&curve, 0.9), None);
    }

    #[test]
    fn planted_leak_blocks_training() {
        let r = small_recipe();
        let mut data = prepare_recipe_data(&r).unwrap();
        let leaked = data.stage2_manifest.test_samples[0].clone();
        data.stage2_manifest.train_samples.push(leaked);
        data.stage2_manifest.train_patient_ids.push(data.stage2_manifest.test_patient_ids[0].clone());
        data.audit = data.reaudit();
        let prepared = Prepared::new(&data).unwrap();
        assert!(matches!(run_stage1(&prepared, &r.policy, &r.stage1, 1, None), Err(Error::Leakage(_))));
        assert!(matches!(run_stage2(&prepared, &r.policy, &r.stage2, 1, None), Err(Error::Leakage(_))));
        assert!(run_experiment_on(&r, &prepared).is_err());
    }

    #[test]
    fn small_experiment_bookkeeping_and_determinism() {
        let r = small_recipe();
        let a = run_experiment(&r).unwrap();
        assert_eq!(a.runs.len(), 3 * 2);
        assert!(a.runs.iter().all(|x| x.outcome.is_ok()));
        let b = run_experiment(&r).unwrap();
        for (x, y) in a.runs.iter().zip(&b.runs) {
            let (x, y) = (x.outcome.as_ref().unwrap(), y.outcome.as_ref().unwrap());
            assert_eq!(x.params, y.params);
            assert_eq!(x.metrics, y.metrics);
            assert_eq!(x.stage2_history, y.stage2_history);
        }
        assert_eq!(summary_text(&a), summary_text(&b));
        assert!(a.ablation.is_some());
    }

    #[test]
    fn zero_steps_keeps_init_metrics() {
        let mut r = small_recipe();
        r.stage2.steps = 0;
        let data = prepare_recipe_data(&r).unwrap();
        let prepared = Prepared::new(&data).unwrap();
        let run = run_stage2(&prepared, &r.policy, &r.stage2, 3, None).unwrap();
        let init = PolicyParams::init(prepared.profile, &r.policy, derive_seed(3, "policy")).unwrap();
        assert_eq!(run.params, init);
        assert_eq!(run.metrics, stage2_metrics(&init, &prepared.stage2, Readout::Diagnosis).unwrap());
        assert_eq!(run.curve.len(), 1);
    }

    #[test]
    fn stage2_test_keeps_natural_prevalence() {
        let r = small_recipe();
        let data = prepare_recipe_data(&r).unwrap();
        let test = data.stage2_test();
        let ids = data.stage2_manifest.test_ids();
        let expected = data.stage2_samples.iter().filter(|s| ids.contains(s.patient_id.as_str())).count();
        assert_eq!(test.len(), expected);
        let train = data.stage2_train();
        let train_pos = train.iter().filter(|s| s.label() == 1).count();
        assert_eq!(2 * train_pos, train.len());
    }
}
