//! Flat `key = value` run configuration.
//!
//! Keys carry a section prefix (`cohort.n_patients`, `stage1.lr`). Files
//! hold one pair per line with `#` comments. Layers resolve with the
//! precedence flags > environment > file > defaults; the defaults define
//! the set of known keys. An environment variable `DR1_STAGE1__LR` maps to
//! `stage1.lr` (drop the prefix, lowercase, `__` becomes `.`).
//!
//! Seeds: the run seed is the master. Components never share a stream;
//! each one draws from `rng::stream(master, label)` with its own label.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::cohort::CohortConfig;
use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::policy::PolicyConfig;
use crate::samples::{BuildConfig, Stage2Options};
use crate::scales::LEVELS;

pub const ENV_PREFIX: &str = "DR1_";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Settings::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("config line {}: empty key", i + 1)));
            }
            out.set(k, v.trim());
        }
        Ok(out)
    }

    /// Pairs `DR1_SECTION__KEY=value` from an environment listing.
    pub fn from_env<I: IntoIterator<Item = (String, String)>>(vars: I) -> Self {
        let mut out = Settings::new();
        for (k, v) in vars {
            if let Some(rest) = k.strip_prefix(ENV_PREFIX) {
                out.set(&rest.to_lowercase().replace("__", "."), &v);
            }
        }
        out
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn overlay(&mut self, other: &Settings) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    pub fn value<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let raw = self.get(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        raw.parse().map_err(|e| Error::Config(format!("`{key} = {raw}`: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        let raw = self.get(key).ok_or_else(|| Error::Config(format!("missing key `{key}`")))?;
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Error::Config(format!("`{key}` item `{s}`: {e}"))))
            .collect()
    }

    /// Sorted `key = value` lines; the config echo written next to outputs.
    pub fn echo(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 8 hex digits of the SHA-256 of the echo.
    pub fn short_hash(&self) -> String {
        let digest = Sha256::digest(self.echo().as_bytes());
        digest.iter().take(4).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.values.clone()
    }
}

/// Layer `file`, `env` and `flags` over `defaults`. Unknown keys in the
/// file or flags are errors; unknown environment keys are ignored since
/// the environment is shared by every command.
pub fn resolve(defaults: &Settings, file: Option<&Settings>, env: &Settings, flags: &Settings) -> Result<Settings> {
    let mut out = defaults.clone();
    if let Some(file) = file {
        reject_unknown(defaults, file, "config file")?;
        out.overlay(file);
    }
    for (k, v) in &env.values {
        if defaults.contains(k) {
            out.set(k, v);
        }
    }
    reject_unknown(defaults, flags, "flags")?;
    out.overlay(flags);
    Ok(out)
}

fn reject_unknown(known: &Settings, layer: &Settings, origin: &str) -> Result<()> {
    match layer.keys().find(|k| !known.contains(k)) {
        Some(k) => Err(Error::Config(format!("unknown key `{k}` in {origin}"))),
        None => Ok(()),
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn cohort_settings(c: &CohortConfig, out: &mut Settings) {
    out.set("cohort.n_patients", c.n_patients);
    out.set("cohort.profile", c.profile);
    out.set("cohort.visit_gap_min", c.visit_gap_min);
    out.set("cohort.visit_gap_max", c.visit_gap_max);
    out.set("cohort.min_visits", c.min_visits);
    out.set("cohort.max_visits", c.max_visits);
    out.set("cohort.fluctuation_prob", c.fluctuation_prob);
    out.set("cohort.monthly_move_rate", c.monthly_move_rate);
    out.set("cohort.noise_scale", c.noise_scale);
    let overrides: Vec<String> = c.noise_overrides.iter().map(|(k, v)| format!("{k}:{v}")).collect();
    out.set("cohort.noise_overrides", overrides.join(","));
    out.set("cohort.initial_level_weights", join(&c.initial_level_weights));
}

/// The cohort block; the seed is supplied by the caller.
pub fn cohort_from(s: &Settings, seed: u64) -> Result<CohortConfig> {
    let weights: Vec<f64> = s.list("cohort.initial_level_weights")?;
    let initial_level_weights: [f64; LEVELS] =
        weights.try_into().map_err(|_| Error::Config(format!("cohort.initial_level_weights needs {LEVELS} values")))?;
    let mut noise_overrides = BTreeMap::new();
    for item in s.list::<String>("cohort.noise_overrides")? {
        let (k, v) = item
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("cohort.noise_overrides item `{item}` is not INDEX:sd")))?;
        let v: f64 = v.trim().parse().map_err(|_| Error::Config(format!("cohort.noise_overrides item `{item}`")))?;
        noise_overrides.insert(k.trim().to_string(), v);
    }
    let c = CohortConfig {
        n_patients: s.value("cohort.n_patients")?,
        profile: s.value("cohort.profile")?,
        visit_gap_min: s.value("cohort.visit_gap_min")?,
        visit_gap_max: s.value("cohort.visit_gap_max")?,
        min_visits: s.value("cohort.min_visits")?,
        max_visits: s.value("cohort.max_visits")?,
        fluctuation_prob: s.value("cohort.fluctuation_prob")?,
        monthly_move_rate: s.value("cohort.monthly_move_rate")?,
        noise_scale: s.value("cohort.noise_scale")?,
        noise_overrides,
        initial_level_weights,
        seed,
    };
    c.validate()?;
    Ok(c)
}

pub fn build_settings(b: &BuildConfig, out: &mut Settings) {
    out.set("build.test_ratio", b.test_ratio);
    out.set("build.max_len", b.max_len);
    out.set("build.stage1_tasks", b.stage1_tasks.join(","));
    out.set("build.stage2_min_gap", b.stage2.min_gap_months);
    out.set("build.stage2_horizons", join(&b.stage2.horizons));
    out.set("build.stage1_test_cap", b.stage1_test_cap.unwrap_or(0));
}

pub fn build_from(s: &Settings) -> Result<BuildConfig> {
    let test_ratio: f64 = s.value("build.test_ratio")?;
    if !(0.0..1.0).contains(&test_ratio) {
        return Err(Error::Config(format!("build.test_ratio = {test_ratio} outside [0, 1)")));
    }
    let stage2 =
        Stage2Options { min_gap_months: s.value("build.stage2_min_gap")?, horizons: s.list("build.stage2_horizons")? };
    stage2.validate()?;
    let cap: usize = s.value("build.stage1_test_cap")?;
    Ok(BuildConfig {
        test_ratio,
        max_len: s.value("build.max_len")?,
        stage1_tasks: s.list("build.stage1_tasks")?,
        stage2,
        stage1_test_cap: (cap > 0).then_some(cap),
    })
}

pub fn policy_settings(p: &PolicyConfig, out: &mut Settings) {
    out.set("policy.hidden", p.hidden);
    out.set("policy.init_scale", p.init_scale);
}

pub fn policy_from(s: &Settings) -> Result<PolicyConfig> {
    let p = PolicyConfig { hidden: s.value("policy.hidden")?, init_scale: s.value("policy.init_scale")? };
    if !(p.init_scale.is_finite() && p.init_scale >= 0.0) {
        return Err(Error::Config("policy.init_scale must be finite and >= 0".into()));
    }
    Ok(p)
}

/// A GRPO block under `prefix` (`stage1` or `stage2`). The seed is not a
/// key; callers derive it from the run seed.
pub fn grpo_settings(prefix: &str, g: &GrpoConfig, out: &mut Settings) {
    for (k, v) in g.echo("") {
        if k != "seed" {
            out.set(&format!("{prefix}.{k}"), v);
        }
    }
}

pub fn grpo_from(s: &Settings, prefix: &str, seed: u64) -> Result<GrpoConfig> {
    let key = |k: &str| format!("{prefix}.{k}");
    let g = GrpoConfig {
        group_size: s.value(&key("group_size"))?,
        clip_eps: s.value(&key("clip_eps"))?,
        kl_coef: s.value(&key("kl_coef"))?,
        lr: s.value(&key("lr"))?,
        steps: s.value(&key("steps"))?,
        queries_per_step: s.value(&key("queries_per_step"))?,
        optimizer: s.value(&key("optimizer"))?,
        eval_every: s.value(&key("eval_every"))?,
        seed,
    };
    g.validate().map_err(|e| Error::Config(format!("{prefix}: {e}")))?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_echo() {
        let s = Settings::parse("# run\nstage1.lr = 0.5\n\ncohort.n_patients=10 # small\n").unwrap();
        assert_eq!(s.get("stage1.lr"), Some("0.5"));
        assert_eq!(s.get("cohort.n_patients"), Some("10"));
        assert_eq!(s.echo(), "cohort.n_patients = 10\nstage1.lr = 0.5\n");
        assert_eq!(Settings::parse(&s.echo()).unwrap(), s);
        assert!(Settings::parse("novalue\n").is_err());
        assert!(Settings::parse(" = 3\n").is_err());
    }

    #[test]
    fn env_names() {
        let env = Settings::from_env([
            ("DR1_STAGE1__LR".to_string(), "0.1".to_string()),
            ("DR1_COHORT__N_PATIENTS".to_string(), "5".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ]);
        assert_eq!(env.get("stage1.lr"), Some("0.1"));
        assert_eq!(env.get("cohort.n_patients"), Some("5"));
        assert_eq!(env.keys().count(), 2);
    }

    #[test]
    fn precedence() {
        let mut defaults = Settings::new();
        for k in ["a", "b", "c", "d"] {
            defaults.set(k, "default");
        }
        let file = Settings::parse("a = file\nb = file\nc = file").unwrap();
        let env = Settings::parse("a = env\nb = env\nz = env").unwrap();
        let flags = Settings::parse("a = flag").unwrap();
        let r = resolve(&defaults, Some(&file), &env, &flags).unwrap();
        assert_eq!(r.get("a"), Some("flag"));
        assert_eq!(r.get("b"), Some("env"));
        assert_eq!(r.get("c"), Some("file"));
        assert_eq!(r.get("d"), Some("default"));
        assert!(!r.contains("z"));
        let bad = Settings::parse("q = 1").unwrap();
        assert!(resolve(&defaults, Some(&bad), &env, &Settings::new()).is_err());
        assert!(resolve(&defaults, None, &env, &bad).is_err());
    }

    #[test]
    fn typed_blocks_round_trip() {
        let mut s = Settings::new();
        let mut cohort = CohortConfig::default();
        cohort.noise_overrides.insert("MMSE".into(), 0.5);
        cohort_settings(&cohort, &mut s);
        let build = BuildConfig { stage1_test_cap: Some(300), ..Default::default() };
        build_settings(&build, &mut s);
        policy_settings(&PolicyConfig::default(), &mut s);
        grpo_settings("stage2", &GrpoConfig::default(), &mut s);
        assert_eq!(cohort_from(&s, 0).unwrap(), cohort);
        assert_eq!(build_from(&s).unwrap(), build);
        assert_eq!(policy_from(&s).unwrap(), PolicyConfig::default());
        assert_eq!(grpo_from(&s, "stage2", 0).unwrap(), GrpoConfig::default());
        s.set("stage2.group_size", 1);
        assert!(matches!(grpo_from(&s, "stage2", 0), Err(Error::Config(_))));
        s.set("cohort.initial_level_weights", "1,2");
        assert!(cohort_from(&s, 0).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Settings::parse("x = 1").unwrap();
        let b = Settings::parse("x = 2").unwrap();
        assert_eq!(a.short_hash().len(), 8);
        assert_eq!(a.short_hash(), a.clone().short_hash());
        assert_ne!(a.short_hash(), b.short_hash());
    }
}
