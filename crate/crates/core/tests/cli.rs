use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dr1::policy::read_checkpoint;
use dr1::samples::LongitudinalSample;

fn dr1(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dr1")).args(args).output().expect("spawn dr1")
}

fn code(out: &Output) -> Option<i32> {
    out.status.code()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn cohort(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("cohort.jsonl");
    let out = dr1(&["gen-cohort", "--n", &n.to_string(), "--seed", "5", "--out", &s(&path)]);
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn samples(dir: &Path, n: usize) -> PathBuf {
    let c = cohort(dir, n);
    let out_dir = dir.join("samples");
    let out = dr1(&["build-samples", "--cohort", &s(&c), "--seed", "5", "--out-dir", &s(&out_dir)]);
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    out_dir
}

#[test]
fn gen_cohort_writes_header_plus_one_line_per_patient() {
    let tmp = tempfile::tempdir().unwrap();
    let path = cohort(tmp.path(), 37);
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 38);
    assert!(tmp.path().join("cohort.jsonl.config.kv").exists());
}

#[test]
fn zero_patients_is_a_valid_empty_cohort() {
    let tmp = tempfile::tempdir().unwrap();
    let path = cohort(tmp.path(), 0);
    assert_eq!(fs::read_to_string(path).unwrap().lines().count(), 1);
}

#[test]
fn missing_required_argument_exits_1() {
    assert_eq!(code(&dr1(&["gen-cohort"])), Some(1));
    assert_eq!(code(&dr1(&["train", "--stage", "3", "--samples", "x"])), Some(1));
}

#[test]
fn unknown_config_key_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dr1(&["gen-cohort", "--set", "cohort.bogus=1", "--out", &s(&tmp.path().join("c.jsonl"))]);
    assert_eq!(code(&out), Some(1));
}

#[test]
fn corrupt_cohort_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let good = cohort(tmp.path(), 10);
    let text = fs::read_to_string(good).unwrap();
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, format!("{}\n{{\"patient_id\": ", text.lines().next().unwrap())).unwrap();
    let out = dr1(&["build-samples", "--cohort", &s(&bad), "--out-dir", &s(&tmp.path().join("o"))]);
    assert_eq!(code(&out), Some(2));
    let missing = dr1(&["build-samples", "--cohort", "/nonexistent/c.jsonl", "--out-dir", &s(&tmp.path().join("o"))]);
    assert_eq!(code(&missing), Some(2));
}

#[test]
fn max_len_drops_long_prompts() {
    let tmp = tempfile::tempdir().unwrap();
    let c = cohort(tmp.path(), 80);
    let dir = tmp.path().join("short");
    let out = dr1(&["build-samples", "--cohort", &s(&c), "--max-len", "40", "--out-dir", &s(&dir)]);
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for file in ["stage1_samples.jsonl", "stage2_samples.jsonl"] {
        let text = fs::read_to_string(dir.join(file)).unwrap();
        for line in text.lines() {
            let sample: LongitudinalSample = serde_json::from_str(line).unwrap();
            assert!(sample.prompt_text.split_whitespace().count() <= 40);
        }
    }
}

#[test]
fn zero_steps_writes_the_init_checkpoint_back() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = samples(tmp.path(), 100);
    let t1 = tmp.path().join("t1");
    let out = dr1(&["train", "--stage", "1", "--samples", &s(&dir), "--steps", "20", "--out-dir", &s(&t1)]);
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt1 = t1.join("stage1.ckpt");

    let t2 = tmp.path().join("t2");
    let out = dr1(&[
        "train",
        "--stage",
        "2",
        "--samples",
        &s(&dir),
        "--init",
        &s(&ckpt1),
        "--steps",
        "0",
        "--out-dir",
        &s(&t2),
    ]);
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let before = read_checkpoint(fs::read(&ckpt1).unwrap().as_slice()).unwrap().params;
    let after = read_checkpoint(fs::read(t2.join("stage2.ckpt")).unwrap().as_slice()).unwrap().params;
    assert_eq!(before.theta, after.theta);
    for f in ["history.jsonl", "curve.jsonl", "report.jsonl", "report.txt"] {
        assert!(t2.join(f).exists(), "{f}");
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("F1"));
}

#[test]
fn init_from_corrupt_checkpoint_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = samples(tmp.path(), 60);
    let bad = tmp.path().join("bad.ckpt");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let out = dr1(&["train", "--stage", "2", "--samples", &s(&dir), "--init", &s(&bad), "--steps", "1"]);
    assert_eq!(code(&out), Some(2));
}

#[test]
fn unknown_arm_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dr1(&["experiment", "--set", "arms=grpo_grpo,nope", "--out-dir", &s(&tmp.path().join("e"))]);
    assert_eq!(code(&out), Some(1));
}

#[test]
fn single_seed_experiment_reports_zero_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("e");
    let out = dr1(&[
        "experiment",
        "--seeds",
        "1",
        "--set",
        "cohort.n_patients=120",
        "--set",
        "stage1.steps=30",
        "--set",
        "stage2.steps=30",
        "--out-dir",
        &s(&dir),
    ]);
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let text = serde_json::to_string(&summary).unwrap();
    assert!(text.contains("\"std\":0.0"), "{text}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("± 0.00"));
    for arm in ["grpo_grpo", "grpo_stage2_only"] {
        assert!(dir.join(format!("report_{arm}.jsonl")).exists());
        assert!(dir.join(format!("curves_{arm}.jsonl")).exists());
    }
}

#[test]
fn recipe_file_and_flags_follow_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let recipe = tmp.path().join("r.kv");
    fs::write(&recipe, "cohort.n_patients = 12\ncohort.profile = adni\n").unwrap();
    let path = tmp.path().join("c.jsonl");
    let out = dr1(&["gen-cohort", "--config", &s(&recipe), "--n", "9", "--out", &s(&path)]);
    assert_eq!(code(&out), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let echo = fs::read_to_string(tmp.path().join("c.jsonl.config.kv")).unwrap();
    assert!(echo.contains("cohort.n_patients = 9"));
    assert!(echo.contains("cohort.profile = adni"));
    assert_eq!(fs::read_to_string(path).unwrap().lines().count(), 10);
}
