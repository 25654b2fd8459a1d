use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use distill_core::state_core::load_state;
use distill_core::witness::{SearchOutcome, Verdict, VerdictKind};
use distill_core::TolerancePolicy;
use serde_json::Value;

const BELL: &str = r#"{"format":"qsf-1","dimA":2,"dimB":2,"matrix":[[0.5,0],[0,0],[0,0],[0.5,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0,0],[0.5,0],[0,0],[0,0],[0.5,0]]}"#;

fn distill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distill"))
        .args(args)
        .env_remove("QSF_TOLERANCE")
        .output()
        .expect("binary runs")
}

fn report(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("report is JSON")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn verdict_verifies(rep: &Value, path: &Path) -> Verdict {
    let v: Verdict = serde_json::from_value(rep["result"]["verdict"].clone()).unwrap();
    let st = load_state(&std::fs::read(path).unwrap(), true, TolerancePolicy::default())
        .unwrap()
        .state;
    v.verify(&st).expect("certificate re-validates after reload");
    v
}

#[test]
fn bell_state_is_one_distillable() {
    let dir = tempfile::tempdir().unwrap();
    let bell = write(dir.path(), "bell.qsf.json", BELL);
    let rep = report(&distill(&["analyze", bell.to_str().unwrap()]));
    assert_eq!(rep["schema"], "report-1");
    let v = verdict_verifies(&rep, &bell);
    assert_eq!(v.kind, VerdictKind::OneDistillable);
    let w = v.witness().unwrap();
    assert!((w.value + 0.5).abs() < 1e-9, "{}", w.value);
}

#[test]
fn witness_command_reports_half() {
    let dir = tempfile::tempdir().unwrap();
    let bell = write(dir.path(), "bell.qsf.json", BELL);
    let rep = report(&distill(&["witness", bell.to_str().unwrap(), "--copies", "1"]));
    let out: SearchOutcome = serde_json::from_value(rep["result"].clone()).unwrap();
    let w = out.witness.expect("witness found");
    assert!((w.value + 0.5).abs() < 1e-9);
    let st = load_state(BELL.as_bytes(), true, TolerancePolicy::default()).unwrap().state;
    assert!((w.verify(&st).unwrap() + 0.5).abs() < 1e-9);
}

#[test]
fn schmidt_rank_two_fixture_is_separable_with_maps() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let gen = report(&distill(&[
        "generate",
        "schmidt-rank",
        "--M",
        "3",
        "--N",
        "3",
        "--sr",
        "2",
        "--seed",
        "4",
        "--out",
        corpus.to_str().unwrap(),
    ]));
    let path = PathBuf::from(gen["result"]["path"].as_str().unwrap());
    assert!(corpus.join("labels.json").exists());
    let rep = report(&distill(&["analyze", path.to_str().unwrap()]));
    let v = verdict_verifies(&rep, &path);
    assert_eq!(v.kind, VerdictKind::Separable);
    assert_eq!(rep["result"]["verdict"]["certificate"]["type"], "classical-classical");
}

#[test]
fn template_fixture_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let gen = report(&distill(&[
        "generate",
        "b-irreducible-template",
        "--M",
        "4",
        "--N",
        "4",
        "--seed",
        "1",
        "--out",
        corpus.to_str().unwrap(),
    ]));
    assert_eq!(gen["result"]["labels"]["rank"], 5);
    let path = PathBuf::from(gen["result"]["path"].as_str().unwrap());
    let rep = report(&distill(&["analyze", path.to_str().unwrap()]));
    assert_eq!(verdict_verifies(&rep, &path).kind, VerdictKind::OneDistillable);
}

#[test]
fn reports_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = report(&distill(&["generate", "random", "--M", "3", "--N", "3", "--rank", "4", "--seed", "2"]));
    let text = serde_json::to_string(&out["result"]["state"]).unwrap();
    let p = write(dir.path(), "r.qsf.json", &text);
    let p = p.to_str().unwrap();
    let a = distill(&["analyze", p, "--seed", "3", "--threads", "1"]);
    let b = distill(&["analyze", p, "--seed", "3", "--threads", "4"]);
    let c = distill(&["analyze", p, "--seed", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn decompose_and_normal_form_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let gen = report(&distill(&[
        "generate",
        "b-reducible",
        "--M",
        "2",
        "--N",
        "4",
        "--seed",
        "5",
        "--out",
        corpus.to_str().unwrap(),
    ]));
    let path = gen["result"]["path"].as_str().unwrap().to_string();
    let rep = report(&distill(&["decompose", &path, "--side", "b"]));
    assert_eq!(rep["result"]["reducible"], true);
    assert!(rep["result"]["children"].as_array().unwrap().len() >= 2);

    let gen = report(&distill(&["generate", "ppt-rank-n", "--M", "2", "--N", "3", "--seed", "5", "--out", corpus.to_str().unwrap()]));
    let path = gen["result"]["path"].as_str().unwrap().to_string();
    let rep = report(&distill(&["normal-form", &path, "--form", "ppt-rank-n"]));
    assert!(rep["result"]["result"]["reconstruction_residual"].as_f64().unwrap() < 1e-8);
    let rep = report(&distill(&["schmidt", &path]));
    assert!(rep["result"]["schmidt_rank"].as_u64().unwrap() >= 1);
}

#[test]
fn verify_suite_passes_and_unknown_suite_is_input_error() {
    let rep = report(&distill(&["verify", "--suite", "sr2-cc", "--trials", "5", "--seed", "7"]));
    assert_eq!(rep["result"]["passed"], true);
    assert_eq!(rep["result"]["failures"].as_array().unwrap().len(), 0);
    let out = distill(&["verify", "--suite", "no-such-suite"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_for_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.qsf.json", r#"{"format":"qsf-1","dimA":2"#);
    assert_eq!(distill(&["analyze", bad.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.qsf.json");
    assert_eq!(distill(&["analyze", missing.to_str().unwrap()]).status.code(), Some(2));
    let not_psd = write(
        dir.path(),
        "neg.qsf.json",
        r#"{"format":"qsf-1","dimA":1,"dimB":2,"matrix":[[1,0],[0,0],[0,0],[-1,0]]}"#,
    );
    assert_eq!(distill(&["analyze", not_psd.to_str().unwrap()]).status.code(), Some(2));

    let bell = write(dir.path(), "bell.qsf.json", BELL);
    let out = Command::new(env!("CARGO_BIN_EXE_distill"))
        .args(["analyze", bell.to_str().unwrap()])
        .env("QSF_TOLERANCE", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // contract violation: Schmidt-rank-3 form on a Schmidt-rank-4 state
    let out = distill(&["normal-form", bell.to_str().unwrap(), "--form", "sr3"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn timings_only_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let bell = write(dir.path(), "bell.qsf.json", BELL);
    let plain = report(&distill(&["analyze", bell.to_str().unwrap()]));
    assert!(plain.get("timings").is_none());
    let timed = report(&distill(&["analyze", bell.to_str().unwrap(), "--timings"]));
    assert!(timed["timings"]["total_secs"].as_f64().is_some());
}
