use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SUBCOMMANDS: [&str; 8] = [
    "simulate",
    "resonance-fit",
    "gap-fit",
    "iq-calibrate",
    "trigger-align",
    "offilter",
    "spectrum-fit",
    "run",
];

fn mkid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkid")).args(args).output().unwrap()
}

fn in_dir(dir: &Path, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    let d = dir.to_str().unwrap();
    all.extend(["--output", d]);
    mkid(&all)
}

fn file(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

fn error_doc(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not a JSON error ({e}): {text}"))
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn help_on_every_subcommand() {
    assert!(mkid(&["--help"]).status.success());
    for sub in SUBCOMMANDS {
        let out = mkid(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(!out.stdout.is_empty(), "{sub}");
    }
}

#[test]
fn unknown_flag_is_a_config_error() {
    let out = mkid(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_doc(&out)["error"], "config");
}

#[test]
fn missing_output_directory_exits_3() {
    let out = mkid(&["simulate", "--output", "/nonexistent/mkid/out"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_doc(&out)["exit_code"], 3);
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = file(dir.path(), "cfg.json");
    std::fs::write(&cfg, r#"{"spectrum": {"sigmaa": 0.03}}"#).unwrap();
    let out = in_dir(dir.path(), &["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&cfg, r#"{"scenario": {"photons": {"mu": -1.0}}}"#).unwrap();
    let out = in_dir(dir.path(), &["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(listing(dir.path()), vec!["cfg.json"]);
}

#[test]
fn empty_and_malformed_inputs_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = file(dir.path(), "sweep.csv");
    std::fs::write(&sweep, "freq_hz,re,im\n").unwrap();
    let out = in_dir(dir.path(), &["resonance-fit", "--input", &sweep]);
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(&sweep, "freq_hz,re,im\n1e9,abc,0\n").unwrap();
    assert_eq!(in_dir(dir.path(), &["resonance-fit", "--input", &sweep]).status.code(), Some(3));
    let missing = file(dir.path(), "absent.csv");
    assert_eq!(in_dir(dir.path(), &["gap-fit", "--input", &missing]).status.code(), Some(3));
    assert_eq!(listing(dir.path()), vec!["sweep.csv"]);
}

#[test]
fn missing_input_flag_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(in_dir(dir.path(), &["resonance-fit"]).status.code(), Some(2));
}

#[test]
fn failed_analysis_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = file(dir.path(), "cfg.json");
    // nothing crosses this threshold, so no record is usable for the template
    std::fs::write(&cfg, r#"{"trigger": {"detector": {"threshold": 1e9}}}"#).unwrap();
    let out = in_dir(dir.path(), &["run", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_doc(&out)["error"], "numerical");
    assert_eq!(listing(dir.path()), vec!["cfg.json"]);
}

#[test]
fn simulate_is_deterministic_and_seeded() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert!(in_dir(a.path(), &["simulate", "--seed", "7"]).status.success());
    assert!(in_dir(b.path(), &["simulate", "--seed", "7"]).status.success());
    assert!(in_dir(c.path(), &["simulate", "--seed", "8"]).status.success());
    let names = listing(a.path());
    assert_eq!(names, listing(b.path()));
    for n in &names {
        assert_eq!(std::fs::read(a.path().join(n)).unwrap(), std::fs::read(b.path().join(n)).unwrap(), "{n}");
    }
    assert_ne!(
        std::fs::read(a.path().join("sweep.csv")).unwrap(),
        std::fs::read(c.path().join("sweep.csv")).unwrap()
    );
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |out: Output| assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    ok(in_dir(d, &["simulate"]));
    ok(in_dir(d, &["resonance-fit", "--input", &file(d, "sweep.csv")]));
    ok(in_dir(d, &["gap-fit", "--input", &file(d, "qi_series.csv")]));
    ok(in_dir(d, &["iq-calibrate", "--input", &file(d, "calibration.json")]));
    ok(in_dir(d, &["trigger-align", "--input", &file(d, "signal.json")]));
    ok(in_dir(d, &["offilter", "--input", &file(d, "aligned.json")]));
    ok(in_dir(d, &["spectrum-fit", "--input", &file(d, "off.csv")]));

    let read = |name: &str| -> Value { serde_json::from_slice(&std::fs::read(d.join(name)).unwrap()).unwrap() };
    let res = read("resonance_fit.json");
    assert!(res["converged"].as_bool().unwrap());
    let q = res["q"].as_f64().unwrap();
    assert!((q / 4050.0 - 1.0).abs() < 0.02, "Q = {q}");
    let gap = read("gap_fit.json");
    assert!((gap["delta_ev"].as_f64().unwrap() / 0.150e-3 - 1.0).abs() < 0.01);
    let align = read("alignment.json");
    assert_eq!(align["n_records"], 1000);
    let sp = read("spectrum_fit.json");
    let mu = sp["mu"].as_f64().unwrap();
    assert!((mu - 12.4).abs() < 2.0, "μ = {mu}");
    let off = std::fs::read_to_string(d.join("off.csv")).unwrap();
    assert!(off.starts_with("record_index,off_value,tag"));
    assert_eq!(off.lines().count(), 1001);

    // the staged chain matches the one-shot run
    let whole = tempfile::tempdir().unwrap();
    ok(in_dir(whole.path(), &["run"]));
    for name in ["resonance_fit.json", "gap_fit.json", "off.csv", "spectrum_fit.json"] {
        assert_eq!(
            std::fs::read(d.join(name)).unwrap(),
            std::fs::read(whole.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn spectrum_fit_needs_a_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let off = file(dir.path(), "off.csv");
    std::fs::write(&off, "record_index,off_value,tag\n0,0.9,good\n1,1.1,good\n").unwrap();
    assert_eq!(in_dir(dir.path(), &["spectrum-fit", "--input", &off]).status.code(), Some(2));
    assert_eq!(
        in_dir(dir.path(), &["spectrum-fit", "--input", &off, "--sigma", "-1"]).status.code(),
        Some(2)
    );
}
