use std::fs;
use std::path::Path;
use std::process::Command;

use rotqec::codes::CodeParams;
use rotqec_cli::scenario::Protocol;
use rotqec_cli::{execute, load, parse_scenario, presets, run_to_dir, verify_path, CliError};

const SHORT: &str = r#"
name = "short"
code = { kind = "cs", j_c = 7, m1 = 2, m2 = 5 }
initial = "down"
protocol = { kind = "dec", mode = "repump_only" }
time = { duration = 0.02, step = 0.005 }
observables = ["physical_fidelity", "mean_j"]

[[checkpoints]]
check = "range"
column = "physical_fidelity"
min = 0.0
max = 1.0
"#;

const SHORT_SEQ: &str = r#"
name = "short_seq"
code = { kind = "a", j_c = 7, m0 = -2, m1 = 2 }
environment = { mode = "physical", dipole = 3.0, rotational_constant_hz = 10e9, temperature = 300.0 }
protocol = { kind = "sequential", baseline = false }
time = { duration = 0.1, step = 0.05 }
seed = 11
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rotqec"))
}

#[test]
fn every_preset_parses() {
    for name in presets::names() {
        let s = presets::preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(s.name, name);
    }
    let s = load("fig5_cs725").unwrap();
    assert_eq!(s.code, CodeParams::Cs { j_c: 7, m1: 2, m2: 5 });
    match s.protocol {
        Protocol::Sequential(p) => assert_eq!(p.omega_bsb, 500.0),
        other => panic!("unexpected protocol {other:?}"),
    }
}

#[test]
fn empty_and_unknown_inputs_are_named() {
    match parse_scenario("  \n", "empty.toml") {
        Err(e @ CliError::Parse { .. }) => assert!(e.to_string().starts_with("empty.toml:1:1")),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let bad = SHORT.replace("initial = \"down\"", "initial = \"down\"\nrtol = 1e-9");
    let err = parse_scenario(&bad, "bad.toml").unwrap_err();
    assert!(matches!(err, CliError::Parse { line: 5, column: 1, .. }), "{err}");
    assert!(err.to_string().contains("rtol"), "{err}");
    assert!(matches!(load("fig9"), Err(CliError::UnknownPreset(_))));
}

#[test]
fn validation_runs_before_any_work() {
    let no_env = SHORT_SEQ.replace("environment = ", "# environment = ");
    let err = parse_scenario(&no_env, "x.toml").unwrap_err();
    assert!(matches!(err, CliError::Validation { .. }), "{err}");
    let bad_obs = SHORT.replace("\"mean_j\"", "\"mean_k\"");
    let err = parse_scenario(&bad_obs, "x.toml").unwrap_err();
    assert!(err.to_string().contains("mean_k"), "{err}");
}

#[test]
fn physical_environment_is_normalized() {
    let s = parse_scenario(SHORT_SEQ, "seq.toml").unwrap();
    let out = execute(&s).unwrap();
    let g = out.normalization.gamma_c.unwrap();
    assert!(out.normalization.applied && g > 0.0);
    assert_eq!(out.table.index_values, vec![0.0, 0.05, 0.1]);
    let trace = out.table.column("trace").unwrap();
    assert!(trace.iter().all(|t| (t - 1.0).abs() < 1e-6), "{trace:?}");
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for text in [SHORT, SHORT_SEQ] {
        let s = parse_scenario(text, "s.toml").unwrap();
        let (a, _) = run_to_dir(&s, &dir.path().join("a")).unwrap();
        let (b, _) = run_to_dir(&s, &dir.path().join("b")).unwrap();
        for f in ["series.csv", "series.json", "series.dat"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{} {f}", s.name);
        }
    }
}

fn fresh_run(root: &Path) -> std::path::PathBuf {
    let s = parse_scenario(SHORT, "s.toml").unwrap();
    run_to_dir(&s, root).unwrap().0
}

#[test]
fn verify_flags_tampering_by_name() {
    let root = tempfile::tempdir().unwrap();
    let dir = fresh_run(root.path());
    let report = verify_path(&dir).unwrap();
    assert!(report.passed(), "{}", report.render());

    let csv = dir.join("series.csv");
    let text = fs::read_to_string(&csv).unwrap();
    fs::write(&csv, text.replacen("0.005,", "0.006,", 1)).unwrap();
    let report = verify_path(root.path()).unwrap();
    let failed: Vec<_> = report.failures().map(|f| f.detail.clone()).collect();
    assert_eq!(failed, vec!["hash mismatch in series.csv".to_string()]);

    fs::remove_file(dir.join("series.dat")).unwrap();
    let report = verify_path(&dir).unwrap();
    assert!(report.failures().any(|f| f.detail == "missing file series.dat"), "{}", report.render());
}

#[test]
fn cross_run_references_must_exist() {
    let root = tempfile::tempdir().unwrap();
    let s = presets::preset("appendixC2_right").unwrap();
    run_to_dir(&s, root.path()).unwrap();
    let report = verify_path(root.path()).unwrap();
    let failed: Vec<_> = report.failures().collect();
    assert_eq!(failed.len(), 1, "{}", report.render());
    assert!(failed[0].detail.contains("appendixC2_left"), "{}", failed[0].detail);
}

#[test]
fn binary_exit_codes() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("short.toml");
    fs::write(&cfg, SHORT).unwrap();
    let out = root.path().join("out");

    let st = bin().args(["run", cfg.to_str().unwrap(), "--strict", "--out"]).arg(&out).status().unwrap();
    assert_eq!(st.code(), Some(0));
    let st = bin().arg("verify").arg(out.join("short")).status().unwrap();
    assert_eq!(st.code(), Some(0));

    let empty = root.path().join("empty.toml");
    fs::write(&empty, "").unwrap();
    let o = bin().arg("run").arg(&empty).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty.toml:1:1"));

    let o = bin().args(["describe", "nope"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));

    fs::remove_file(out.join("short").join("series.json")).unwrap();
    let o = bin().arg("verify").arg(out.join("short")).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("missing file series.json"));

    let o = bin().args(["list-presets", "--names"]).output().unwrap();
    let names: Vec<String> = String::from_utf8_lossy(&o.stdout).lines().map(String::from).collect();
    assert_eq!(names.len(), presets::PRESETS.len());
    let o = bin().args(["describe", "fig5_cs725"]).output().unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), presets::source("fig5_cs725").unwrap());
}

#[test]
fn out_dir_defaults_to_the_environment_variable() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("short.toml");
    fs::write(&cfg, SHORT).unwrap();
    let st = bin()
        .arg("run")
        .arg(&cfg)
        .env("ROTQEC_OUT_DIR", root.path().join("env-out"))
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(0));
    assert!(root.path().join("env-out/short/manifest.json").is_file());
}

#[test]
fn groups_run_in_parallel_and_verify_together() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("out");
    let o = bin().args(["run", "appendixC1", "--jobs", "2", "--strict", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = verify_path(&out).unwrap();
    assert!(report.passed(), "{}", report.render());
    assert_eq!(rotqec_cli::verify::run_dirs(&out).unwrap().len(), 2);

    let o = bin().args(["run", "appendixC1_up", "appendixC1", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("listed twice"));
}
