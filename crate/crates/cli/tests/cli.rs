use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nmpc-drive"))
}

#[test]
fn validate_accepts_builtin_names() {
    for name in ["dlc80", "parking10", "alden60"] {
        let out = bin().args(["validate", name]).output().unwrap();
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
    }
}

#[test]
fn empty_scenario_lists_required_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.toml");
    std::fs::write(&path, "").unwrap();
    let out = bin().arg("validate").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("name") && err.contains("path"), "{err}");
}

#[test]
fn run_writes_outputs_and_summarize_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["run", "parking10", "--seed", "3", "--out"]).arg(dir.path()).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("check completed: PASS"));
    let log = dir.path().join("parking10").join("runlog.csv");
    let summary = bin().arg("summarize").arg(&log).output().unwrap();
    assert!(summary.status.success());
    let text = String::from_utf8_lossy(&summary.stdout);
    assert!(text.contains("max_reference_shift_m: 1.500"), "{text}");
    assert!(text.contains("solve_time_ms"));
}

#[test]
fn failed_pass_conditions_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.toml");
    // the run stops on the time limit before reaching the end of the path
    std::fs::write(
        &path,
        "name = \"short\"\nmax_time_s = 0.4\n[path]\nkind = \"straight\"\nspeed_kph = 30.0\nlength_m = 100.0\nlane_half_width_m = 1.5\n",
    )
    .unwrap();
    let out = bin().arg("run").arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_scenario_is_an_error() {
    let out = bin().args(["run", "no-such-scenario"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
