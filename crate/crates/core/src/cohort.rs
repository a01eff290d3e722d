//! Synthetic longitudinal cohorts.
//!
//! Each patient carries a hidden severity level in `0..=6` that evolves one
//! calendar month at a time. In any month the level moves with probability
//! `drift * monthly_move_rate`; a move is an improvement (`-1`) with
//! probability `fluctuation_prob` and a decline (`+1`) otherwise, clamped to
//! the level bounds. Visits are `visit_gap_min..=visit_gap_max` calendar
//! months apart (uniform integer) and record each profile index with its
//! own observation probability. A recorded value is the zero-noise level
//! mapping from [`crate::scales`] plus symmetric Gaussian noise, clamped to
//! the index range and snapped to the index grid.
//!
//! The binary label is `1` iff the level at the last visit is at least
//! [`DEMENTIA_LEVEL`] (CDR global >= 1). With the default initial-level
//! weights and uniform drift, prevalence is roughly 40%.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use chrono::{Months, NaiveDate};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::scales::{self, IndexSpec, Profile, DEMENTIA_LEVEL, LEVELS};

const MAX_LEVEL: u8 = (LEVELS - 1) as u8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeverityState {
    pub level: u8,
    pub drift: f64,
}

impl SeverityState {
    pub fn new(level: u8, drift: f64) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::Argument(format!("severity level {level} outside 0..={MAX_LEVEL}")));
        }
        if !(0.0..=1.0).contains(&drift) {
            return Err(Error::Argument(format!("drift {drift} outside [0, 1]")));
        }
        Ok(SeverityState { level, drift })
    }

    pub fn is_dementia(&self) -> bool {
        self.level >= DEMENTIA_LEVEL
    }
}

/// Monthly transition parameters shared by every patient of a cohort.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentDynamics {
    pub monthly_move_rate: f64,
    pub fluctuation_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub date: NaiveDate,
    pub observations: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub final_label: u8,
    pub visits: Vec<Visit>,
    /// Latent state at each visit. Generator-internal; not serialized.
    #[serde(skip)]
    pub trajectory: Vec<SeverityState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub profile: Profile,
    pub visit_gap_min: u32,
    pub visit_gap_max: u32,
    pub min_visits: usize,
    pub max_visits: usize,
    pub fluctuation_prob: f64,
    pub monthly_move_rate: f64,
    pub noise_scale: f64,
    /// Per-index replacement for the registry noise unit.
    pub noise_overrides: BTreeMap<String, f64>,
    /// Unnormalized weights of the level at the first visit.
    pub initial_level_weights: [f64; LEVELS],
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n_patients: 2000,
            profile: Profile::Amc,
            visit_gap_min: 1,
            visit_gap_max: 6,
            min_visits: 4,
            max_visits: 12,
            fluctuation_prob: 0.2,
            monthly_move_rate: 0.12,
            noise_scale: 1.0,
            noise_overrides: BTreeMap::new(),
            initial_level_weights: [0.15, 0.30, 0.35, 0.15, 0.05, 0.0, 0.0],
            seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.visit_gap_min < 1 || self.visit_gap_max < self.visit_gap_min {
            return bad(format!(
                "visit gap bounds [{}, {}] must satisfy 1 <= min <= max",
                self.visit_gap_min, self.visit_gap_max
            ));
        }
        if self.min_visits < 2 || self.max_visits < self.min_visits {
            return bad(format!(
                "visit count bounds [{}, {}] must satisfy 2 <= min <= max",
                self.min_visits, self.max_visits
            ));
        }
        for (name, p) in [("fluctuation_prob", self.fluctuation_prob), ("monthly_move_rate", self.monthly_move_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad(format!("noise_scale = {} must be finite and >= 0", self.noise_scale));
        }
        for (name, v) in &self.noise_overrides {
            if scales::index(name).is_none() {
                return Err(Error::UnknownIndex(name.clone()));
            }
            if !(v.is_finite() && *v >= 0.0) {
                return bad(format!("noise override for {name} = {v} must be finite and >= 0"));
            }
        }
        let w = &self.initial_level_weights;
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return bad("initial level weights must be non-negative with a positive sum".into());
        }
        Ok(())
    }

    pub fn dynamics(&self) -> LatentDynamics {
        LatentDynamics { monthly_move_rate: self.monthly_move_rate, fluctuation_prob: self.fluctuation_prob }
    }

    fn noise_sd(&self, spec: &IndexSpec) -> f64 {
        self.noise_overrides.get(spec.name).copied().unwrap_or(spec.noise_unit) * self.noise_scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub profile: Profile,
    pub patients: Vec<Patient>,
}

/// One calendar month of latent evolution.
pub fn latent_step(state: SeverityState, dynamics: &LatentDynamics, rng: &mut Rng) -> SeverityState {
    let moves = rng.random::<f64>() < state.drift * dynamics.monthly_move_rate;
    let improves = rng.random::<f64>() < dynamics.fluctuation_prob;
    if !moves {
        return state;
    }
    let level = if improves { state.level.saturating_sub(1) } else { (state.level + 1).min(MAX_LEVEL) };
    SeverityState { level, ..state }
}

/// Record one visit for a patient in `state`.
pub fn emit_visit(state: SeverityState, date: NaiveDate, config: &CohortConfig, rng: &mut Rng) -> Visit {
    let mut observations = BTreeMap::new();
    for spec in config.profile.indices() {
        let observed = rng.random::<f64>() < spec.observe_prob;
        let base = spec.level_map[state.level as usize];
        let sd = config.noise_sd(spec);
        let noise = if sd > 0.0 { Normal::new(0.0, sd).expect("finite sd").sample(rng) } else { 0.0 };
        if observed {
            observations.insert(spec.name.to_string(), spec.snap(base + noise));
        }
    }
    Visit { date, observations }
}

fn draw_level(weights: &[f64; LEVELS], rng: &mut Rng) -> u8 {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (level, &w) in weights.iter().enumerate() {
        if u < w {
            return level as u8;
        }
        u -= w;
    }
    // Rounding fell off the end; take the last level with weight.
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u8
}

fn generate_patient(config: &CohortConfig, ordinal: usize) -> Patient {
    let mut rng = rng::stream(config.seed, &format!("cohort/patient/{ordinal}"));
    let dynamics = config.dynamics();

    let year = rng.random_range(2010..=2019);
    let month = rng.random_range(1..=12);
    let day = rng.random_range(1..=28);
    let mut date = NaiveDate::from_ymd_opt(year, month, day).expect("valid start date");

    let n_visits = rng.random_range(config.min_visits..=config.max_visits);
    let mut state =
        SeverityState { level: draw_level(&config.initial_level_weights, &mut rng), drift: rng.random::<f64>() };

    let mut visits = Vec::with_capacity(n_visits);
    let mut trajectory = Vec::with_capacity(n_visits);
    for k in 0..n_visits {
        if k > 0 {
            let gap = rng.random_range(config.visit_gap_min..=config.visit_gap_max);
            for _ in 0..gap {
                state = latent_step(state, &dynamics, &mut rng);
            }
            date = date.checked_add_months(Months::new(gap)).expect("date in range");
        }
        visits.push(emit_visit(state, date, config, &mut rng));
        trajectory.push(state);
    }

    Patient { patient_id: format!("P{ordinal:06}"), final_label: u8::from(state.is_dementia()), visits, trajectory }
}

/// Generate a cohort. Patient `i` draws from its own stream derived from
/// `(seed, i)`, so a smaller cohort is a prefix of a larger one.
pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    config.validate()?;
    let patients = (0..config.n_patients).map(|i| generate_patient(config, i)).collect();
    Ok(Cohort { profile: config.profile, patients })
}

impl Patient {
    pub fn validate(&self, profile: Profile) -> Result<()> {
        if self.visits.len() < 2 {
            return Err(Error::Parse(format!("patient {} has fewer than 2 visits", self.patient_id)));
        }
        if self.final_label > 1 {
            return Err(Error::Parse(format!("patient {} has non-binary label", self.patient_id)));
        }
        for pair in self.visits.windows(2) {
            if pair[1].date <= pair[0].date {
                return Err(Error::Parse(format!(
                    "patient {} visits not strictly increasing at {}",
                    self.patient_id, pair[1].date
                )));
            }
        }
        let allowed: Vec<&str> = profile.indices().iter().map(|s| s.name).collect();
        for visit in &self.visits {
            for (name, &value) in &visit.observations {
                if !allowed.contains(&name.as_str()) {
                    return Err(Error::UnknownIndex(name.clone()));
                }
                let spec = scales::index(name).expect("profile index registered");
                if !value.is_finite() || !spec.contains(value) {
                    return Err(Error::Parse(format!(
                        "patient {} {name} = {value} outside [{}, {}]",
                        self.patient_id, spec.lo, spec.hi
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CohortHeader {
    format: String,
    version: u32,
    profile: Profile,
    n_patients: usize,
}

const COHORT_FORMAT: &str = "dr1-cohort";
const COHORT_VERSION: u32 = 1;

impl Cohort {
    /// Line-delimited JSON: one header record, then one patient per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = CohortHeader {
            format: COHORT_FORMAT.into(),
            version: COHORT_VERSION,
            profile: self.profile,
            n_patients: self.patients.len(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for patient in &self.patients {
            serde_json::to_writer(&mut out, patient)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Cohort> {
        let mut lines = input.lines().enumerate();
        let header: CohortHeader = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| Error::Parse(format!("cohort header: {e}")))?;
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("cohort header: {e}")))?
            }
            None => return Err(Error::Parse("empty cohort file (missing header)".into())),
        };
        if header.format != COHORT_FORMAT || header.version != COHORT_VERSION {
            return Err(Error::Parse(format!("unsupported cohort format {} v{}", header.format, header.version)));
        }
        let mut patients = Vec::with_capacity(header.n_patients);
        for (i, line) in lines {
            let line = line.map_err(|e| Error::Parse(format!("cohort line {}: {e}", i + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let patient: Patient =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("cohort line {}: {e}", i + 1)))?;
            patient.validate(header.profile)?;
            patients.push(patient);
        }
        if patients.len() != header.n_patients {
            return Err(Error::Parse(format!(
                "header declares {} patients, found {}",
                header.n_patients,
                patients.len()
            )));
        }
        Ok(Cohort { profile: header.profile, patients })
    }

    pub fn prevalence(&self) -> f64 {
        if self.patients.is_empty() {
            return 0.0;
        }
        let pos = self.patients.iter().filter(|p| p.final_label == 1).count();
        pos as f64 / self.patients.len() as f64
    }
}
