//! Group Relative Policy Optimization.
//!
//! For each query the current policy is snapshotted as the old policy and
//! `G` answers are drawn from it. Each answer is rendered as a boxed
//! completion and scored by the task's verifiable reward. Advantages are
//! the group rewards standardized with the population standard deviation
//! (all zero when the group is constant). The objective maximized is
//!
//! ```text
//! J = 1/G * sum_i min(r_i * A_i, clip(r_i, 1 - eps, 1 + eps) * A_i) - beta * KL(pi || pi_ref)
//! r_i = exp(log pi(a_i | q) - log pi_old(a_i | q))
//! ```
//!
//! with the exact categorical KL against a reference frozen at stage
//! start. There is no value function: the group mean is the baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{sample_group, CategoricalDistribution, PolicyParams};
use crate::reward::{format_boxed_answer, RewardRule};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub lr: f64,
    pub steps: usize,
    /// Queries (groups) averaged into one update.
    pub queries_per_step: usize,
    pub optimizer: OptimizerKind,
    /// Evaluation cadence in steps; 0 disables periodic evaluation.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 0.01,
            lr: 0.05,
            steps: 5000,
            queries_per_step: 1,
            optimizer: OptimizerKind::Sgd,
            eval_every: 100,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config(format!("group_size must be >= 2, got {}", self.group_size)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps.is_finite()) {
            return Err(Error::Config(format!("clip_eps must be > 0, got {}", self.clip_eps)));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(Error::Config(format!("kl_coef must be >= 0, got {}", self.kl_coef)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.queries_per_step == 0 {
            return Err(Error::Config("queries_per_step must be >= 1".into()));
        }
        Ok(())
    }

    pub fn echo(&self, prefix: &str) -> BTreeMap<String, String> {
        [
            ("group_size", self.group_size.to_string()),
            ("clip_eps", self.clip_eps.to_string()),
            ("kl_coef", self.kl_coef.to_string()),
            ("lr", self.lr.to_string()),
            ("steps", self.steps.to_string()),
            ("queries_per_step", self.queries_per_step.to_string()),
            ("optimizer", self.optimizer.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (format!("{prefix}{k}"), v))
        .collect()
    }
}

/// `(R_i - mean) / std` with the population std; all zeros when the
/// spread is negligible (`std <= 1e-12 * max(1, max |R|)`).
pub fn compute_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = rewards.iter().fold(1.0f64, |m, r| m.max(r.abs()));
    if std <= 1e-12 * scale {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

pub fn kl_divergence(current: &CategoricalDistribution, reference: &CategoricalDistribution) -> Result<f64> {
    if current.len() != reference.len() {
        return Err(Error::Argument(format!("KL over mismatched spaces ({} vs {})", current.len(), reference.len())));
    }
    Ok(current
        .probs
        .iter()
        .zip(current.log_probs.iter().zip(&reference.log_probs))
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, (lp, lq))| p * (lp - lq))
        .sum())
}

/// One query's rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub head: usize,
    pub features: Vec<f64>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub kl: f64,
    /// Members whose ratio sat on the binding side of the clip band.
    pub clipped: usize,
}

/// Value and exact gradient of the clipped surrogate minus the KL penalty.
pub fn surrogate_objective(
    params: &PolicyParams,
    group: &RolloutGroup,
    reference: &PolicyParams,
    config: &GrpoConfig,
) -> Result<Surrogate> {
    let mut gradient = vec![0.0; params.len()];
    let (value, kl, clipped) = accumulate_surrogate(params, group, reference, config, 1.0, &mut gradient)?;
    Ok(Surrogate { value, gradient, kl, clipped })
}

fn accumulate_surrogate(
    params: &PolicyParams,
    group: &RolloutGroup,
    reference: &PolicyParams,
    config: &GrpoConfig,
    scale: f64,
    gradient: &mut [f64],
) -> Result<(f64, f64, usize)> {
    let g = group.len();
    if g == 0 || group.old_log_probs.len() != g || group.advantages.len() != g {
        return Err(Error::Argument("rollout group fields have mismatched lengths".into()));
    }
    let pass = params.forward(group.head, &group.features)?;
    let ref_dist = reference.forward(group.head, &group.features)?.dist;
    let dist = &pass.dist;
    let (lo, hi) = (1.0 - config.clip_eps, 1.0 + config.clip_eps);

    let mut dlogits = vec![0.0; dist.len()];
    let mut total = 0.0;
    let mut clipped = 0;
    for i in 0..g {
        let a = group.actions[i];
        let adv = group.advantages[i];
        let ratio = (dist.log_probs[a] - group.old_log_probs[i]).exp();
        if !ratio.is_finite() {
            return Err(Error::Numeric(format!("non-finite importance ratio for member {i}")));
        }
        let clipped_ratio = ratio.clamp(lo, hi);
        total += (ratio * adv).min(clipped_ratio * adv);
        // The clipped branch is constant in theta; it binds above the band
        // for positive advantages and below it for negative ones.
        let binds = (adv > 0.0 && ratio > hi) || (adv < 0.0 && ratio < lo);
        if binds {
            clipped += 1;
            continue;
        }
        // d(ratio * A)/d logits = A * ratio * (onehot(a) - p).
        let c = adv * ratio;
        for (k, p) in dist.probs.iter().enumerate() {
            dlogits[k] -= c * p;
        }
        dlogits[a] += c;
    }

    let kl = kl_divergence(dist, &ref_dist)?;
    if config.kl_coef > 0.0 {
        // dKL/dz_k = p_k * (log p_k - log q_k - KL).
        for k in 0..dist.len() {
            let d = dist.probs[k] * (dist.log_probs[k] - ref_dist.log_probs[k] - kl);
            dlogits[k] -= config.kl_coef * g as f64 * d;
        }
    }
    let inv_g = 1.0 / g as f64;
    params.backward_into(&group.features, &pass, &dlogits, scale * inv_g, gradient);
    let value = total * inv_g - config.kl_coef * kl;
    if !value.is_finite() {
        return Err(Error::Numeric("non-finite surrogate value".into()));
    }
    Ok((value, kl, clipped))
}

/// A featurized training query.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub sample_id: String,
    pub head: usize,
    pub features: Vec<f64>,
    pub target: f64,
    pub rule: RewardRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub mean_reward: f64,
    pub surrogate_value: f64,
    pub kl: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum OptimizerState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub step: usize,
    pub history: Vec<StepRecord>,
    optimizer: OptimizerState,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl TrainState {
    /// Fresh state; the reference policy is a frozen copy of `params`.
    pub fn new(params: PolicyParams, optimizer: OptimizerKind) -> Self {
        let n = params.len();
        TrainState {
            reference: params.clone(),
            params,
            step: 0,
            history: Vec::new(),
            optimizer: match optimizer {
                OptimizerKind::Sgd => OptimizerState::Sgd,
                OptimizerKind::Adam => OptimizerState::Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 },
            },
        }
    }
}

/// Sample, score and normalize one group from the current policy.
pub fn rollout(
    params: &PolicyParams,
    example: &TrainExample,
    group_size: usize,
    rng: &mut Rng,
) -> Result<RolloutGroup> {
    let draws = sample_group(params, example.head, &example.features, group_size, rng)?;
    let space = params.space(example.head);
    let rewards: Vec<f64> = draws
        .iter()
        .map(|(a, _)| example.rule.score(&format_boxed_answer(space.actions[*a]), example.target))
        .collect();
    Ok(RolloutGroup {
        head: example.head,
        features: example.features.clone(),
        actions: draws.iter().map(|d| d.0).collect(),
        old_log_probs: draws.iter().map(|d| d.1).collect(),
        advantages: compute_advantages(&rewards),
        rewards,
    })
}

/// One on-policy update over `batch`. On error the state is left as it
/// was.
pub fn train_step(
    state: &mut TrainState,
    batch: &[&TrainExample],
    config: &GrpoConfig,
    rng: &mut Rng,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut gradient = vec![0.0; state.params.len()];
    let weight = 1.0 / batch.len() as f64;
    let (mut reward, mut value, mut kl) = (0.0, 0.0, 0.0);
    for example in batch {
        let group = rollout(&state.params, example, config.group_size, rng)?;
        let (v, k, _) = accumulate_surrogate(&state.params, &group, &state.reference, config, weight, &mut gradient)?;
        reward += weight * group.rewards.iter().sum::<f64>() / group.len() as f64;
        value += weight * v;
        kl += weight * k;
    }
    let grad_norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::Numeric("non-finite gradient".into()));
    }

    let mut theta = state.params.theta.clone();
    let mut optimizer = state.optimizer.clone();
    match &mut optimizer {
        OptimizerState::Sgd => {
            for (t, g) in theta.iter_mut().zip(&gradient) {
                *t += config.lr * g;
            }
        }
        OptimizerState::Adam { m, v, t } => {
            *t += 1;
            let c1 = 1.0 - ADAM_B1.powi(*t as i32);
            let c2 = 1.0 - ADAM_B2.powi(*t as i32);
            for i in 0..theta.len() {
                let g = gradient[i];
                m[i] = ADAM_B1 * m[i] + (1.0 - ADAM_B1) * g;
                v[i] = ADAM_B2 * v[i] + (1.0 - ADAM_B2) * g * g;
                theta[i] += config.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric("update produced non-finite parameters".into()));
    }

    state.params.theta = theta;
    state.optimizer = optimizer;
    state.step += 1;
    let record = StepRecord { step: state.step, mean_reward: reward, surrogate_value: value, kl, grad_norm };
    state.history.push(record.clone());
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub history: Vec<StepRecord>,
}

/// Run `config.steps` updates over `data`, reshuffled every epoch.
/// `on_eval` sees the parameters at step 0, every `eval_every` steps and
/// after the last step.
pub fn train(
    config: &GrpoConfig,
    data: &[TrainExample],
    init: PolicyParams,
    mut on_eval: impl FnMut(usize, &PolicyParams) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("no training data".into()));
    }
    let mut order_rng = rng::stream(config.seed, "grpo/order");
    let mut rollout_rng = rng::stream(config.seed, "grpo/rollout");
    let mut state = TrainState::new(init, config.optimizer);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();

    let should_eval = |step: usize| config.eval_every > 0 && step.is_multiple_of(config.eval_every);
    on_eval(0, &state.params)?;
    for step in 1..=config.steps {
        let mut batch = Vec::with_capacity(config.queries_per_step);
        for _ in 0..config.queries_per_step {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        train_step(&mut state, &batch, config, &mut rollout_rng)?;
        if should_eval(step) || step == config.steps {
            on_eval(step, &state.params)?;
        }
    }
    Ok(TrainOutcome { params: state.params, history: state.history })
}
