use std::path::Path;
use std::process::{Command, Output};

fn plansql(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plansql"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn corpus() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let o = plansql(dir.path(), &["fixtures", "."]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    dir
}

#[test]
fn run_prints_the_table_and_exits_zero() {
    let dir = corpus();
    let o = plansql(dir.path(), &["run", "--config", "config/dev.toml", "--out", "runs/a"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("default (dev)"), "{out}");
    assert!(out.lines().nth(1).unwrap().trim_end().ends_with("100.00"), "{out}");
    assert!(dir.path().join("runs/a/report.json").is_file());
}

#[test]
fn flags_are_recorded_in_the_report() {
    let dir = corpus();
    let o = plansql(
        dir.path(),
        &[
            "run", "--config", "config/dev.toml", "--no-guidelines", "--single-plan", "--zh-mode", "translate",
            "--parallelism", "2", "--mock-script", "mock/dev.toml", "--out", "runs/flags",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("no_guidelines+single_plan+zh=translate (dev)"), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("runs/flags/report.json")).unwrap()).unwrap();
    assert_eq!(report["ablation_flags"], serde_json::json!(["no_guidelines", "single_plan"]));
    assert_eq!(report["zh_mode"], "translate");
}

#[test]
fn low_accuracy_still_exits_zero() {
    let dir = corpus();
    let o = plansql(dir.path(), &["run", "--config", "config/heldout.toml"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("33.33"), "{}", stdout(&o));
}

#[test]
fn eval_and_inspect_read_a_finished_run() {
    let dir = corpus();
    assert!(plansql(dir.path(), &["run", "--config", "config/dev.toml", "--out", "runs/e"]).status.success());
    let o = plansql(dir.path(), &["eval", "runs/e"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("default (dev)"));
    let o = plansql(dir.path(), &["inspect", "--run", "runs/e", "--query", "d05"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("John Nizinik"), "{}", stdout(&o));
    assert!(!plansql(dir.path(), &["inspect", "--run", "runs/e", "--query", "zz"]).status.success());
}

#[test]
fn refine_pauses_for_review_then_distills() {
    let dir = corpus();
    assert!(plansql(dir.path(), &["run", "--config", "config/heldout.toml"]).status.success());
    let args = ["refine", "--config", "config/heldout.toml", "--run", "runs/heldout"];
    let first = plansql(dir.path(), &args);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("wrote 2 clusters"), "{}", stdout(&first));
    let second = plansql(dir.path(), &args);
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    assert!(stdout(&second).contains("prompt version 1"), "{}", stdout(&second));
    assert!(dir.path().join("prompt_snapshots/planner_v001.txt").is_file());
    // The heldout split may no longer be scored with its own guidelines.
    let again = plansql(dir.path(), &["run", "--config", "config/heldout.toml"]);
    assert!(!again.status.success());
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = corpus();
    let o = plansql(dir.path(), &["run", "--config", "config/missing.toml"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    assert!(!plansql(dir.path(), &["run", "--config", "config/dev.toml", "--split", "nope"]).status.success());
}
