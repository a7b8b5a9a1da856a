use std::path::{Path, PathBuf};
use std::process::Command;

fn sarith() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sarith"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("sarith-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn verify_passes() {
    let dir = scratch("verify");
    let out = sarith().args(["verify", "--samples", "10", "--out"]).arg(&dir).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("all suites passed"));
    assert!(dir.join("report.json").exists());
}

#[test]
fn count_then_report() {
    let dir = scratch("count");
    let out = sarith()
        .arg("count")
        .arg("--config")
        .arg(configs().join("asymptotic.json"))
        .args(["--samples", "2", "--max-T", "2000", "--format", "csv,json", "--out"])
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = dir.join("report.csv");
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("seed,sample,step,T_inf,T_2,V,N,ratio"));

    let svg_dir = dir.join("svg");
    let out = sarith().args(["report", "--input"]).arg(&csv).arg("--out").arg(&svg_dir).output().unwrap();
    assert!(out.status.success());
    let svg = std::fs::read_to_string(svg_dir.join("report.svg")).unwrap();
    assert_eq!(svg.matches("class=\"sample\"").count(), 2);
}

#[test]
fn bad_input_exits_with_2() {
    let out = sarith().arg("count").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let dir = scratch("bad");
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.csv");
    std::fs::write(&bad, "not,a,report\n1,2,3\n").unwrap();
    let out = sarith().args(["report", "--input"]).arg(&bad).arg("--out").arg(&dir).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
