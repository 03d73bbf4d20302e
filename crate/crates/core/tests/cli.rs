use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_trolleybot"))
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn run_writes_logs() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--scenario", &scenario("approach_noiseless.json"), "--seed", "5", "--controller", "mpc", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("mpc_run.csv")).unwrap();
    assert!(csv.starts_with("t,x,y,theta,v,omega,V,h,phi,delta,stage\n"));
    assert!(dir.path().join("mpc_run.json").is_file());
}

#[test]
fn batch_writes_summary_and_reference_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["batch", "--scenario", &scenario("approach_noisy.json"), "--runs", "3", "--seed", "2", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("e_x 2.08 +- 0.96 mm"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let names: Vec<&str> = summary
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["controller"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["clfcbf", "mpc", "nonlinear"]);
    for key in ["success", "ex_mean", "ex_std", "ey_mean", "ey_std", "eth_mean", "eth_std"] {
        assert!(summary[0].get(key).is_some(), "{key}");
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 3 * 3 * 2 + 1);
}

#[test]
fn mission_from_map_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["mission", "--scenario", &scenario("mission_mapfile.json"), "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mission.json")).unwrap()).unwrap();
    assert_eq!(report["docked_count"], 4);
    assert!(dir.path().join("mission.csv").is_file());
}

#[test]
fn bad_scenario_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{ "runz": 3 }"#).unwrap();
    let out = bin().args(["batch", "--scenario"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("runz"));
}
