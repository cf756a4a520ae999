use std::path::Path;
use std::process::Command;

fn run(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_swarmplan")).args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "swarmplan {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_plan_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let mission = dir.path().join("mission.json");
    let traj = dir.path().join("traj.json");
    let report = dir.path().join("report.json");
    let csv = dir.path().join("series.csv");
    run(&["gen-mission", "--seed", "2", "--num-agents", "4", "--out", s(&mission)]);
    run(&[
        "plan",
        "--mission",
        s(&mission),
        "--out",
        s(&traj),
        "--report",
        s(&report),
        "--csv",
        s(&csv),
        "--dump-corridors",
    ]);
    assert!(dir.path().join("traj.corridors.json").exists());
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(summary["report"]["passed"], true);
    let header = std::fs::read_to_string(&csv).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("t,px_0,py_0,pz_0"), "{header}");

    let out = run(&["validate", "--traj", s(&traj), "--mission", s(&mission), "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn validate_rejects_a_mismatched_mission() {
    let dir = tempfile::tempdir().unwrap();
    let (m4, m2) = (dir.path().join("m4.json"), dir.path().join("m2.json"));
    let traj = dir.path().join("traj.json");
    run(&["gen-mission", "--seed", "1", "--num-agents", "4", "--out", s(&m4)]);
    run(&["gen-mission", "--seed", "5", "--num-agents", "4", "--radius", "0.2", "--out", s(&m2)]);
    run(&["plan", "--mission", s(&m4), "--out", s(&traj)]);
    let out = Command::new(env!("CARGO_BIN_EXE_swarmplan"))
        .args(["validate", "--traj", s(&traj), "--mission", s(&m2)])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
