use std::path::Path;
use std::process::{Command, Output};

fn eigencrater(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eigencrater"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = eigencrater(args, cwd);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let none = eigencrater(&[], dir.path());
    assert_eq!(none.status.code(), Some(1));
    let text = String::from_utf8_lossy(&none.stdout).into_owned() + &String::from_utf8_lossy(&none.stderr);
    assert!(text.contains("Usage"));
    assert_eq!(eigencrater(&["--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(eigencrater(&["templates", "--k"], dir.path()).status.code(), Some(1));
    assert_eq!(
        eigencrater(&["detect", "--scene", "s", "--view", "v", "--out", "o", "--mode", "tilted"], dir.path()).status.code(),
        Some(1)
    );
}

#[test]
fn missing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = eigencrater(&["run", "--scene", "absent", "--templates", "absent", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = eigencrater(&["templates", "--field", "absent", "--out", "t"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_shows_reference_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let t = ok(&["templates", "--help"], dir.path());
    assert!(t.contains("--k <K>") && t.contains("[default: 4]"));
    assert!(t.contains("[default: 25]"));
    let d = ok(&["detect", "--help"], dir.path());
    assert!(d.contains("[default: warp_image]"));
    assert!(d.contains("--seed"));
}

#[test]
fn stages_and_full_runs_agree_and_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["synth", "--out", "field", "--training", "30", "--seed", "4"], d);
    ok(&["synth", "--out", "scene", "--views", "2", "--size", "192", "--hfov", "12", "--seed", "4"], d);
    ok(&["templates", "--field", "field", "--out", "tpl", "--k", "3", "--components", "15", "--seed", "4"], d);
    ok(&["render", "--templates", "tpl", "--out", "rend", "--incidence", "60"], d);
    assert_eq!(std::fs::read_dir(d.join("rend")).unwrap().count(), 3);

    let report = ok(&["run", "--scene", "scene", "--templates", "tpl", "--out", "a", "--jobs", "1", "--seed", "4"], d);
    assert!(report.contains("AUC@"));
    ok(
        &["run", "--scene", "scene", "--templates", "tpl", "--out", "b", "--jobs", "2", "--seed", "4", "--cache", "cache"],
        d,
    );
    assert_eq!(tree(&d.join("a")), tree(&d.join("b")));

    ok(
        &["detect", "--scene", "scene", "--view", "view_001", "--templates", "tpl", "--out", "det.json", "--seed", "4"],
        d,
    );
    ok(
        &["localize", "--scene", "scene", "--view", "view_001", "--detections", "det.json", "--out", "est.json", "--seed", "4"],
        d,
    );
    assert_eq!(std::fs::read(d.join("det.json")).unwrap(), std::fs::read(d.join("a/view_001/detections.json")).unwrap());
    assert_eq!(std::fs::read(d.join("est.json")).unwrap(), std::fs::read(d.join("a/view_001/estimate.json")).unwrap());

    let again = ok(&["eval", "--scene", "scene", "--results", "a", "--out", "summary.json"], d);
    assert_eq!(again, report);
    assert_eq!(std::fs::read(d.join("summary.json")).unwrap(), std::fs::read(d.join("a/summary.json")).unwrap());

    let missing = eigencrater(&["detect", "--scene", "scene", "--view", "view_009", "--templates", "tpl", "--out", "x.json"], d);
    assert_eq!(missing.status.code(), Some(1));
}
