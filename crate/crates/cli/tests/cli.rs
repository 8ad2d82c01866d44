use std::path::PathBuf;
use std::process::{Command, Output};

use edgecast::ids::StreamId;
use edgecast::sensor::{generate_synthetic, SyntheticSpec};

fn edgecast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgecast"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scenario(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "scenarios", name]
        .iter()
        .collect();
    p.to_str().unwrap().to_owned()
}

#[test]
fn check_prints_the_plan() {
    let o = edgecast(&["check", &scenario("desk.json")]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("stream 1: keep 0.9900"), "{text}");
    assert!(text.contains("processes: 2"), "{text}");
}

#[test]
fn check_json_is_machine_readable() {
    let o = edgecast(&["check", "--json", &scenario("desk.json")]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(
        v["streams"][0]["keep"].as_f64().map(|k| (k * 1e4).round()),
        Some(9900.0)
    );
}

#[test]
fn check_rejects_unsatisfiable_requirements() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(scenario("desk.json"))
        .unwrap()
        .replace("0.96", "0.999");
    std::fs::write(&path, text).unwrap();
    let o = edgecast(&["check", path.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid"));
}

#[test]
fn simulated_run_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let o = edgecast(&[
        "run",
        &scenario("desk.json"),
        "--simulate",
        "--duration",
        "2",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["sensors"].as_array().unwrap().len(), 1);
    assert_eq!(v["egresses"].as_array().unwrap().len(), 2);
}

#[test]
fn simulated_runs_repeat_exactly() {
    let args = ["run", &scenario("timeline.json"), "--simulate", "--seed", "9"];
    let a = edgecast(&args);
    let b = edgecast(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn replay_classify_finds_the_video_pid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("capture.ts");
    let spec = SyntheticSpec::new(3, 2, 25.0);
    let bytes: Vec<u8> = generate_synthetic(StreamId(1), &spec, 3)
        .iter()
        .flat_map(|u| u.iter().copied())
        .collect();
    std::fs::write(&path, bytes).unwrap();
    let o = edgecast(&["replay-classify", path.to_str().unwrap()]);
    assert!(o.status.success());
    let lines: Vec<String> = stdout(&o).lines().map(str::to_owned).collect();
    assert_eq!(lines[0], "index,pid,pusi,class");
    let classes: Vec<&str> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(
        classes,
        [
            "non_video",
            "non_video",
            "reference",
            "reference",
            "differential",
            "differential",
            "differential",
            "differential"
        ]
    );
}

#[test]
fn replay_classify_rejects_bad_pids_and_files() {
    assert!(!edgecast(&["replay-classify", "x.ts", "--pid", "0x2000"])
        .status
        .success());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.ts");
    std::fs::write(&path, [0x47u8; 100]).unwrap();
    assert!(!edgecast(&["replay-classify", path.to_str().unwrap()]).status.success());
}

#[test]
fn plot_writes_csv() {
    let o = edgecast(&["plot", "detection"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("x,series,value"));
    assert!(text.contains("5,differential,0.4"), "{text}");
}
