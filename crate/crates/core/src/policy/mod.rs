//! Categorical policy over discrete answers.
//!
//! A shared `tanh` hidden layer feeds one linear head per task; each head
//! produces logits over that task's answer grid and a softmax turns them
//! into a distribution. With `hidden = 0` the heads read the features
//! directly (a linear policy). All parameters live in one flat vector so
//! gradients, optimizers and checkpoints work on plain slices.

mod checkpoint;
mod features;

use rand::Rng as _;
use rand_distr::{Distribution, Uniform};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use features::{feature_dim, featurize, featurize_text, FeatureVector, GAP_BANDS, INDEX_SLOTS};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scales::{self, Profile, DIAGNOSIS};

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    pub task: String,
    pub actions: Vec<f64>,
}

impl ActionSpace {
    pub fn for_task(task: &str) -> Result<Self> {
        let actions = if task == DIAGNOSIS {
            vec![0.0, 1.0]
        } else {
            scales::index(task).ok_or_else(|| Error::UnknownIndex(task.to_string()))?.values()
        };
        Ok(ActionSpace { task: task.to_string(), actions })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn index_of(&self, value: f64) -> Result<usize> {
        self.actions
            .iter()
            .position(|&a| a == value)
            .ok_or_else(|| Error::Argument(format!("{value} is not an action of {}", self.task)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub space: ActionSpace,
    offset: usize,
}

/// Network shape plus the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub profile: Profile,
    pub feature_dim: usize,
    pub hidden: usize,
    pub heads: Vec<Head>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub hidden: usize,
    /// Half-width of the uniform initialization of every weight.
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { hidden: 32, init_scale: 0.1 }
    }
}

/// Heads of a profile: every index, then the diagnosis head.
pub fn profile_tasks(profile: Profile) -> Vec<String> {
    profile.indices().iter().map(|s| s.name.to_string()).chain([DIAGNOSIS.to_string()]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDistribution {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl CategoricalDistribution {
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric("non-finite logit".into()));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let log_z = max + sum.ln();
        let log_probs: Vec<f64> = logits.iter().map(|l| l - log_z).collect();
        let probs = log_probs.iter().map(|lp| lp.exp()).collect();
        Ok(CategoricalDistribution { probs, log_probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Inverse-CDF draw.
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding slack above the accumulated mass.
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

pub fn log_prob(dist: &CategoricalDistribution, action: usize) -> Result<f64> {
    dist.log_probs
        .get(action)
        .copied()
        .ok_or_else(|| Error::Argument(format!("action {action} outside a space of {}", dist.len())))
}

/// Intermediate values of one forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub head: usize,
    pub hidden: Vec<f64>,
    pub dist: CategoricalDistribution,
}

impl PolicyParams {
    pub fn new(profile: Profile, feature_dim: usize, hidden: usize, tasks: &[String]) -> Result<Self> {
        let trunk = hidden * feature_dim + hidden;
        let head_in = if hidden == 0 { feature_dim } else { hidden };
        let mut offset = trunk;
        let mut heads = Vec::with_capacity(tasks.len());
        for task in tasks {
            let space = ActionSpace::for_task(task)?;
            let size = space.len() * head_in + space.len();
            heads.push(Head { space, offset });
            offset += size;
        }
        Ok(PolicyParams { profile, feature_dim, hidden, heads, theta: vec![0.0; offset] })
    }

    /// All-zero parameters for every head of the profile.
    pub fn zeros(profile: Profile, hidden: usize) -> Result<Self> {
        Self::new(profile, feature_dim(profile), hidden, &profile_tasks(profile))
    }

    /// Uniform `[-init_scale, init_scale]` weights, zero biases, drawn from
    /// the stream `policy/init` of `seed`.
    pub fn init(profile: Profile, config: &PolicyConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(profile, config.hidden)?;
        if config.init_scale > 0.0 {
            let mut rng = rng::stream(seed, "policy/init");
            let dist = Uniform::new_inclusive(-config.init_scale, config.init_scale)
                .map_err(|e| Error::Config(format!("init_scale: {e}")))?;
            let (d, h) = (params.feature_dim, params.hidden);
            for w in &mut params.theta[..h * d] {
                *w = dist.sample(&mut rng);
            }
            let head_in = params.head_in();
            for head in params.heads.clone() {
                let n = head.space.len() * head_in;
                for w in &mut params.theta[head.offset..head.offset + n] {
                    *w = dist.sample(&mut rng);
                }
            }
        }
        Ok(params)
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn head_in(&self) -> usize {
        if self.hidden == 0 {
            self.feature_dim
        } else {
            self.hidden
        }
    }

    pub fn head_index(&self, task: &str) -> Result<usize> {
        self.heads.iter().position(|h| h.space.task == task).ok_or_else(|| Error::UnknownIndex(task.to_string()))
    }

    pub fn space(&self, head: usize) -> &ActionSpace {
        &self.heads[head].space
    }

    /// Range of `theta` owned by a head (weights then biases).
    pub fn head_range(&self, head: usize) -> std::ops::Range<usize> {
        let h = &self.heads[head];
        let n = h.space.len() * (self.head_in() + 1);
        h.offset..h.offset + n
    }

    /// Range of `theta` owned by the shared hidden layer.
    pub fn trunk_range(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.feature_dim + self.hidden
    }

    pub fn same_shape(&self, other: &PolicyParams) -> bool {
        self.profile == other.profile
            && self.feature_dim == other.feature_dim
            && self.hidden == other.hidden
            && self.heads == other.heads
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.theta.iter().all(|t| t.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric("non-finite parameter".into()))
        }
    }

    pub fn forward(&self, head: usize, x: &[f64]) -> Result<ForwardPass> {
        if x.len() != self.feature_dim {
            return Err(Error::Argument(format!(
                "feature length {} != policy feature dim {}",
                x.len(),
                self.feature_dim
            )));
        }
        let (d, h) = (self.feature_dim, self.hidden);
        let hidden: Vec<f64> = if h == 0 {
            Vec::new()
        } else {
            let w1 = &self.theta[..h * d];
            let b1 = &self.theta[h * d..h * d + h];
            (0..h)
                .map(|j| {
                    let row = &w1[j * d..(j + 1) * d];
                    (b1[j] + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()).tanh()
                })
                .collect()
        };
        let input: &[f64] = if h == 0 { x } else { &hidden };
        let head_ref = self.heads.get(head).ok_or_else(|| Error::Argument(format!("no head {head}")))?;
        let a = head_ref.space.len();
        let n = input.len();
        let w2 = &self.theta[head_ref.offset..head_ref.offset + a * n];
        let b2 = &self.theta[head_ref.offset + a * n..head_ref.offset + a * n + a];
        let logits: Vec<f64> =
            (0..a).map(|k| b2[k] + w2[k * n..(k + 1) * n].iter().zip(input).map(|(w, v)| w * v).sum::<f64>()).collect();
        Ok(ForwardPass { head, hidden, dist: CategoricalDistribution::from_logits(&logits)? })
    }

    pub fn distribution(&self, task: &str, x: &[f64]) -> Result<CategoricalDistribution> {
        Ok(self.forward(self.head_index(task)?, x)?.dist)
    }

    /// Accumulate `scale * d(objective)/d(theta)` into `grad`, given the
    /// objective's gradient with respect to the logits of `pass`.
    pub fn backward_into(&self, x: &[f64], pass: &ForwardPass, dlogits: &[f64], scale: f64, grad: &mut [f64]) {
        let (d, h) = (self.feature_dim, self.hidden);
        let head = &self.heads[pass.head];
        let input: &[f64] = if h == 0 { x } else { &pass.hidden };
        let n = input.len();
        let a = head.space.len();
        let (w_off, b_off) = (head.offset, head.offset + a * n);
        for k in 0..a {
            let g = scale * dlogits[k];
            if g == 0.0 {
                continue;
            }
            for (j, v) in input.iter().enumerate() {
                grad[w_off + k * n + j] += g * v;
            }
            grad[b_off + k] += g;
        }
        if h == 0 {
            return;
        }
        let w2 = &self.theta[w_off..w_off + a * n];
        for j in 0..h {
            let dh: f64 = (0..a).map(|k| w2[k * n + j] * dlogits[k]).sum::<f64>() * scale;
            let dz = dh * (1.0 - pass.hidden[j] * pass.hidden[j]);
            if dz == 0.0 {
                continue;
            }
            for (i, xi) in x.iter().enumerate() {
                grad[j * d + i] += dz * xi;
            }
            grad[h * d + j] += dz;
        }
    }

    /// Gradient of `log pi(action | x)` for the given head.
    pub fn grad_log_prob(&self, head: usize, x: &[f64], action: usize) -> Result<Vec<f64>> {
        let pass = self.forward(head, x)?;
        if action >= pass.dist.len() {
            return Err(Error::Argument(format!("action {action} outside a space of {}", pass.dist.len())));
        }
        let dlogits: Vec<f64> =
            pass.dist.probs.iter().enumerate().map(|(k, p)| f64::from(u8::from(k == action)) - p).collect();
        let mut grad = vec![0.0; self.len()];
        self.backward_into(x, &pass, &dlogits, 1.0, &mut grad);
        Ok(grad)
    }
}

/// `G` i.i.d. draws with the log-probability recorded at sampling time.
pub fn sample_group(
    params: &PolicyParams,
    head: usize,
    x: &[f64],
    group_size: usize,
    rng: &mut Rng,
) -> Result<Vec<(usize, f64)>> {
    if group_size < 2 {
        return Err(Error::Argument(format!("group size must be >= 2, got {group_size}")));
    }
    let dist = params.forward(head, x)?.dist;
    Ok((0..group_size)
        .map(|_| {
            let a = dist.sample(rng);
            (a, dist.log_probs[a])
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn random_params(seed: u64, hidden: usize, scale: f64) -> PolicyParams {
        PolicyParams::init(Profile::Amc, &PolicyConfig { hidden, init_scale: scale }, seed).unwrap()
    }

    fn random_x(seed: u64, d: usize) -> Vec<f64> {
        let mut r = crate::rng::Rng::seed_from_u64(seed);
        (0..d).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_params_are_uniform() {
        let p = PolicyParams::zeros(Profile::Amc, 8).unwrap();
        let x = random_x(1, p.feature_dim);
        for head in 0..p.heads.len() {
            let d = p.forward(head, &x).unwrap().dist;
            let u = 1.0 / d.len() as f64;
            assert!(d.probs.iter().all(|q| (q - u).abs() < 1e-15));
        }
    }

    #[test]
    fn uniform_two_actions_log_prob() {
        let d = CategoricalDistribution::from_logits(&[0.0, 0.0]).unwrap();
        assert!((log_prob(&d, 0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_prob(&d, 2).is_err());
    }

    #[test]
    fn certainty_limit() {
        let d = CategoricalDistribution::from_logits(&[800.0, -800.0, 0.0]).unwrap();
        assert!(log_prob(&d, 0).unwrap().abs() < 1e-9);
        let mut rng = crate::rng::Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), 0);
        }
    }

    #[test]
    fn shift_invariance() {
        let a = CategoricalDistribution::from_logits(&[0.3, -1.2, 2.0]).unwrap();
        let b = CategoricalDistribution::from_logits(&[100.3, 98.8, 102.0]).unwrap();
        for (p, q) in a.probs.iter().zip(&b.probs) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(matches!(CategoricalDistribution::from_logits(&[f64::NAN, 0.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn linear_uniform_gradient() {
        // Linear policy, diagnosis head (2 actions), zero weights.
        let p = PolicyParams::zeros(Profile::Amc, 0).unwrap();
        let head = p.head_index(DIAGNOSIS).unwrap();
        let x = random_x(3, p.feature_dim);
        let g = p.grad_log_prob(head, &x, 0).unwrap();
        let r = p.head_range(head);
        let d = p.feature_dim;
        let w = &g[r.start..r.start + 2 * d];
        for i in 0..d {
            assert!((w[i] - 0.5 * x[i]).abs() < 1e-15);
            assert!((w[d + i] + 0.5 * x[i]).abs() < 1e-15);
        }
        assert_eq!(&g[r.start + 2 * d..r.end], &[0.5, -0.5]);
        // Other heads untouched.
        assert!(g[..r.start].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn score_identity() {
        for seed in 0..20 {
            let p = random_params(seed, 6, 0.8);
            let x = random_x(seed + 100, p.feature_dim);
            for head in 0..p.heads.len() {
                let dist = p.forward(head, &x).unwrap().dist;
                let mut acc = vec![0.0; p.len()];
                for a in 0..dist.len() {
                    let g = p.grad_log_prob(head, &x, a).unwrap();
                    for (s, gi) in acc.iter_mut().zip(g) {
                        *s += dist.probs[a] * gi;
                    }
                }
                assert!(acc.iter().all(|v| v.abs() < 1e-8));
            }
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let h = 1e-5;
        for seed in 0..10 {
            let p = random_params(seed, 5, 0.7);
            let x = random_x(seed + 7, p.feature_dim);
            let head = (seed as usize) % p.heads.len();
            let a = (seed as usize * 3) % p.space(head).len();
            let g = p.grad_log_prob(head, &x, a).unwrap();
            let mut num = vec![0.0; p.len()];
            for i in 0..p.len() {
                let mut q = p.clone();
                q.theta[i] += h;
                let up = q.forward(head, &x).unwrap().dist.log_probs[a];
                q.theta[i] -= 2.0 * h;
                let dn = q.forward(head, &x).unwrap().dist.log_probs[a];
                num[i] = (up - dn) / (2.0 * h);
            }
            let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
            assert!(diff / norm < 1e-4, "seed {seed}: rel {}", diff / norm);
        }
    }

    #[test]
    fn group_sampling() {
        let p = random_params(1, 4, 0.5);
        let x = random_x(2, p.feature_dim);
        let mut r1 = crate::rng::Rng::seed_from_u64(9);
        let mut r2 = crate::rng::Rng::seed_from_u64(9);
        let a = sample_group(&p, 0, &x, 8, &mut r1).unwrap();
        let b = sample_group(&p, 0, &x, 8, &mut r2).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        assert!(sample_group(&p, 0, &x, 1, &mut r1).is_err());
    }

    #[test]
    fn degenerate_group_is_constant() {
        let mut p = PolicyParams::zeros(Profile::Amc, 0).unwrap();
        let head = p.head_index(DIAGNOSIS).unwrap();
        let r = p.head_range(head);
        p.theta[r.end - 2] = 900.0; // bias of action 0
        let x = vec![0.0; p.feature_dim];
        let mut rng = crate::rng::Rng::seed_from_u64(4);
        let g = sample_group(&p, head, &x, 16, &mut rng).unwrap();
        assert!(g.iter().all(|(a, _)| *a == 0));
    }

    #[test]
    fn action_space_lookup() {
        let s = ActionSpace::for_task("CDR").unwrap();
        assert_eq!(s.index_of(0.5).unwrap(), 1);
        assert!(s.index_of(0.7).is_err());
        assert_eq!(ActionSpace::for_task(DIAGNOSIS).unwrap().actions, vec![0.0, 1.0]);
        assert!(ActionSpace::for_task("NOPE").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn forward_normalizes(seed in any::<u64>(), scale in 0.01f64..5.0) {
            let p = random_params(seed, 6, scale);
            let x = random_x(seed ^ 0x55, p.feature_dim);
            let head = (seed % p.heads.len() as u64) as usize;
            let dist = p.forward(head, &x).unwrap().dist;
            let sum: f64 = dist.probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(dist.probs.iter().all(|q| *q >= 0.0));
            for (lp, q) in dist.log_probs.iter().zip(&dist.probs) {
                prop_assert!((lp.exp() - q).abs() < 1e-12);
            }
        }
    }
}
