//! `dr1`: cohort generation, sample building, staged training and the
//! ablation experiment.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 I/O or parse,
//! 3 leakage audit, 4 numeric failure, 5 every experiment arm failed.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dr1::cohort::{generate_cohort, Cohort};
use dr1::config::{self, Settings};
use dr1::eval;
use dr1::pipeline::{self, Prepared, Recipe};
use dr1::policy::{read_checkpoint, PolicyParams};
use dr1::rng::derive_seed;
use dr1::samples::{self, AuditReport, Datasets, FilterCounts, LongitudinalSample, SplitManifest};
use dr1::scales::Profile;
use dr1::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "dr1", version, about = "Two-stage GRPO for dementia prognosis on synthetic cohorts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Key-value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set stage1.lr=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort file.
    GenCohort {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        profile: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build stage-1 and stage-2 samples, splits and the leakage audit.
    BuildSamples {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long)]
        test_ratio: Option<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train one stage on a built sample directory.
    Train {
        #[arg(long, value_parser = ["1", "2"])]
        stage: String,
        /// Directory written by `build-samples`.
        #[arg(long)]
        samples: PathBuf,
        /// Checkpoint to start from; a fresh policy otherwise.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run every recipe arm over every seed and write the reports.
    Experiment {
        /// Recipe file (same format as --config).
        #[arg(long)]
        recipe: Option<PathBuf>,
        /// Number of training seeds.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::UnknownIndex(_) | Error::Balancing(_) => 1,
        Error::Io { .. } | Error::Parse(_) | Error::Feature(_) | Error::Checkpoint(_) => 2,
        Error::Leakage(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

fn from_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Defaults < file < `DR1_*` environment < flags.
fn resolve(common: &Common, file: Option<&Path>, mut flags: Settings) -> Result<Settings> {
    let file = match file.or(common.config.as_deref()) {
        Some(p) => Some(Settings::parse(&read_text(p)?)?),
        None => None,
    };
    for item in &common.set {
        let (k, v) =
            item.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
        flags.set(k.trim(), v.trim());
    }
    if let Some(seed) = common.seed {
        flags.set("seed", seed);
    }
    let env = Settings::from_env(std::env::vars());
    config::resolve(&Recipe::default_settings(), file.as_ref(), &env, &flags)
}

fn run_dir(explicit: Option<PathBuf>, settings: &Settings) -> Result<PathBuf> {
    let dir = explicit.unwrap_or_else(|| {
        let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
        PathBuf::from("runs").join(format!("{stamp}-{}", settings.short_hash()))
    });
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_text(&dir.join("config.kv"), settings.echo())?;
    Ok(dir)
}

fn gen_cohort(n: Option<usize>, profile: Option<String>, out: &Path, common: &Common) -> Result<()> {
    let mut flags = Settings::new();
    if let Some(n) = n {
        flags.set("cohort.n_patients", n);
    }
    if let Some(p) = profile {
        flags.set("cohort.profile", p);
    }
    let settings = resolve(common, None, flags)?;
    let recipe = Recipe::from_settings(&settings)?;
    let mut cfg = recipe.cohort.clone();
    cfg.seed = recipe.data_seed();
    let cohort = generate_cohort(&cfg)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    cohort.write_jsonl(BufWriter::new(file)).map_err(|e| Error::io(out, e))?;
    let mut echo = out.as_os_str().to_owned();
    echo.push(".config.kv");
    write_text(Path::new(&echo), settings.echo())?;
    eprintln!(
        "wrote {} patients ({} profile, prevalence {:.3}) to {}",
        cohort.patients.len(),
        cohort.profile,
        cohort.prevalence(),
        out.display()
    );
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct BuildMeta {
    profile: Profile,
    filter_counts: Vec<FilterCounts>,
}

fn write_samples(path: &Path, samples: &[LongitudinalSample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    samples::write_samples(samples, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

fn build_samples(
    cohort_path: &Path,
    max_len: Option<usize>,
    test_ratio: Option<f64>,
    out_dir: Option<PathBuf>,
    common: &Common,
) -> Result<()> {
    let mut flags = Settings::new();
    if let Some(m) = max_len {
        flags.set("build.max_len", m);
    }
    if let Some(r) = test_ratio {
        flags.set("build.test_ratio", r);
    }
    let settings = resolve(common, None, flags)?;
    let recipe = Recipe::from_settings(&settings)?;
    let cohort = Cohort::read_jsonl(open(cohort_path)?)?;
    let data = samples::prepare_datasets(&cohort, &recipe.build, recipe.data_seed())?;
    let dir = run_dir(out_dir, &settings)?;

    write_samples(&dir.join("stage1_samples.jsonl"), &data.stage1_samples)?;
    write_samples(&dir.join("stage2_samples.jsonl"), &data.stage2_samples)?;
    write_text(&dir.join("stage1_manifest.json"), to_json(&data.stage1_manifest))?;
    write_text(&dir.join("stage2_manifest.json"), to_json(&data.stage2_manifest))?;
    write_text(&dir.join("balancing.json"), to_json(&data.stage2_manifest.balancing_record))?;
    write_text(&dir.join("audit.json"), to_json(&data.audit))?;
    let meta = BuildMeta { profile: data.profile, filter_counts: data.filter_counts.clone() };
    write_text(&dir.join("build.json"), to_json(&meta))?;

    for c in &data.filter_counts {
        eprintln!("{}: kept {}, removed by length {}", c.stage, c.kept, c.removed);
    }
    eprintln!("wrote samples to {}", dir.display());
    if !data.audit.passed() {
        return Err(Error::Leakage(format!(
            "{} violations, see {}",
            data.audit.violation_count(),
            dir.join("audit.json").display()
        )));
    }
    Ok(())
}

/// Rebuild a dataset from a `build-samples` directory and re-audit it.
fn load_datasets(dir: &Path) -> Result<Datasets> {
    let meta: BuildMeta = from_json(&dir.join("build.json"))?;
    let stage1_manifest: SplitManifest = from_json(&dir.join("stage1_manifest.json"))?;
    let stage2_manifest: SplitManifest = from_json(&dir.join("stage2_manifest.json"))?;
    let mut data = Datasets {
        profile: meta.profile,
        stage1_samples: samples::read_samples(open(&dir.join("stage1_samples.jsonl"))?)?,
        stage2_samples: samples::read_samples(open(&dir.join("stage2_samples.jsonl"))?)?,
        stage1_manifest,
        stage2_manifest,
        filter_counts: meta.filter_counts,
        audit: AuditReport::default(),
    };
    data.audit = data.reaudit();
    Ok(data)
}

fn load_params(path: &Path) -> Result<PolicyParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(read_checkpoint(bytes.as_slice())?.params)
}

#[allow(clippy::too_many_arguments)]
fn train(
    stage: &str,
    samples_dir: &Path,
    init: Option<&Path>,
    steps: Option<usize>,
    lr: Option<f64>,
    out_dir: Option<PathBuf>,
    common: &Common,
) -> Result<()> {
    let prefix = format!("stage{stage}");
    let mut flags = Settings::new();
    if let Some(s) = steps {
        flags.set(&format!("{prefix}.steps"), s);
    }
    if let Some(l) = lr {
        flags.set(&format!("{prefix}.lr"), l);
    }
    let settings = resolve(common, None, flags)?;
    let recipe = Recipe::from_settings(&settings)?;
    let data = load_datasets(samples_dir)?;
    let prepared = Prepared::new(&data)?;
    let init = init.map(load_params).transpose()?;
    let seed = derive_seed(recipe.seed, "train/0");

    let mut echo = settings.clone();
    echo.set("stage", stage);
    let dir = run_dir(out_dir, &echo)?;
    if !prepared.audit.passed() {
        write_text(&dir.join("audit.json"), to_json(&prepared.audit))?;
    }

    let (params, history, curve, report) = if stage == "1" {
        let run = pipeline::run_stage1(&prepared, &recipe.policy, &recipe.stage1, seed, init.as_ref())?;
        let mut report = String::from("task  train  test  random\n");
        for (task, acc) in &run.tasks {
            report.push_str(&format!("{task}  {:.4}  {:.4}  {:.4}\n", acc.train, acc.test, acc.random_baseline));
        }
        write_text(&dir.join("report.json"), to_json(&run.tasks))?;
        (run.params, run.history, run.curve, report)
    } else {
        let run = pipeline::run_stage2(&prepared, &recipe.policy, &recipe.stage2, seed, init.as_ref())?;
        let records = eval::stratum_records("stage2", &run.metrics);
        write_text(&dir.join("report.jsonl"), eval::records_to_jsonl(&records))?;
        let mut rows = vec![("stage2".to_string(), &run.metrics)];
        rows.extend(run.metrics.strata.iter().map(|(b, r)| (format!("  {b}"), r)));
        let report = eval::render_table(&rows);
        (run.params, run.history, run.curve, report)
    };
    pipeline::write_params(&dir.join(format!("stage{stage}.ckpt")), &params, &echo)?;
    write_text(&dir.join("history.jsonl"), pipeline::history_jsonl(&history))?;
    write_text(&dir.join("curve.jsonl"), pipeline::curve_jsonl(&curve))?;
    write_text(&dir.join("report.txt"), &report)?;
    print!("{report}");
    eprintln!("wrote stage-{stage} outputs to {}", dir.display());
    Ok(())
}

/// Ok(true) when at least one arm succeeded.
fn experiment(
    recipe_path: Option<&Path>,
    seeds: Option<usize>,
    out_dir: Option<PathBuf>,
    common: &Common,
) -> Result<bool> {
    let mut flags = Settings::new();
    if let Some(n) = seeds {
        flags.set("seeds", n);
    }
    let settings = resolve(common, recipe_path, flags)?;
    let recipe = Recipe::from_settings(&settings)?;
    let dir = run_dir(out_dir, &settings)?;
    let data = pipeline::prepare_recipe_data(&recipe)?;
    write_text(&dir.join("audit.json"), to_json(&data.audit))?;
    let result = pipeline::run_experiment_on(&recipe, &Prepared::new(&data)?)?;
    pipeline::write_experiment(&result, &settings, &dir)?;
    print!("{}", pipeline::summary_text(&result));
    eprintln!("wrote experiment outputs to {}", dir.display());
    Ok(result.any_succeeded())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::GenCohort { n, profile, out, common } => gen_cohort(n, profile, &out, &common).map(|_| true),
        Command::BuildSamples { cohort, max_len, test_ratio, out_dir, common } => {
            build_samples(&cohort, max_len, test_ratio, out_dir, &common).map(|_| true)
        }
        Command::Train { stage, samples, init, steps, lr, out_dir, common } => {
            train(&stage, &samples, init.as_deref(), steps, lr, out_dir, &common).map(|_| true)
        }
        Command::Experiment { recipe, seeds, out_dir, common } => {
            experiment(recipe.as_deref(), seeds, out_dir, &common)
        }
    };
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: every experiment arm failed");
            ExitCode::from(5)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
