use std::path::Path;
use std::process::{Command, Output};

fn rewarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rewarm")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn lists_and_prints_presets() {
    let o = rewarm(&["preset"]);
    assert!(o.status.success());
    let names = stdout(&o);
    for n in ["grok", "grok-control", "warmstart-rewarm", "theory"] {
        assert!(names.lines().any(|l| l == n), "{names}");
    }
    let o = rewarm(&["preset", "grok"]);
    assert!(stdout(&o).contains("experiment = \"grok\""));
    assert_eq!(rewarm(&["preset", "nope"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    let bad_key = rewarm(&["run", "preset:grok", "--out", out, "--override", "no_such_key=1"]);
    assert_eq!(bad_key.status.code(), Some(2));
    let bad_value = rewarm(&["run", "preset:grok", "--out", out, "--override", "modulus=0"]);
    assert_eq!(bad_value.status.code(), Some(2));
    let not_theory = rewarm(&["validate-theory", "preset:grok", "--out", out]);
    assert_eq!(not_theory.status.code(), Some(2));
}

#[test]
fn missing_files_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(rewarm(&["run", missing.to_str().unwrap()]).status.code(), Some(4));
    assert_eq!(rewarm(&["summarize", dir.path().to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = rewarm(&[
        "run",
        "preset:warmstart-fresh",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "optimizer=\"sgd\"",
        "--override",
        "lr=1e300",
        "--override",
        "use_norm=false",
        "--override",
        "samples_per_class=20",
        "--override",
        "test_per_class=5",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("diverged"));
}

fn small_warm_run(dir: &Path, arm: &str, seed: &str) {
    let o = rewarm(&[
        "run",
        &format!("preset:warmstart-{arm}"),
        "--seed",
        seed,
        "--out",
        dir.to_str().unwrap(),
        "--override",
        "phase_epochs=2",
        "--override",
        "samples_per_class=40",
        "--override",
        "test_per_class=10",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_summarize_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let arms: Vec<_> = ["fresh", "constant", "rewarm"].iter().map(|a| dir.path().join(a)).collect();
    for (arm, d) in ["fresh", "constant", "rewarm"].iter().zip(&arms) {
        small_warm_run(d, arm, "3");
    }
    let config = std::fs::read_to_string(arms[0].join("config.toml")).unwrap();
    assert!(config.contains("seed = 3") && config.contains("phase_epochs = 2"), "{config}");

    let o = rewarm(&["summarize", arms[1].to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("last step"));

    let dirs: Vec<&str> = arms.iter().map(|d| d.to_str().unwrap()).collect();
    let o = rewarm(&["report-warmstart", dirs[0], dirs[1], dirs[2], "--tolerance", "0.05"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("fresh"));
}

#[test]
fn theory_preset_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = rewarm(&[
        "validate-theory",
        "preset:theory",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "grid_dim=16",
        "--override",
        "grid_samples=200",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("points agree"));
    assert!(out.join("theory.csv").exists());
}
