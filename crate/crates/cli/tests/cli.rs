use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aoi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi"))
        .args(args)
        .output()
        .expect("spawn aoi")
}

const SINGLE_LINK: &str = r#"{
  "name": "single_link",
  "network": {
    "nodes": 2,
    "links": [{ "from": 0, "to": 1, "buffer": 1, "dist": { "kind": "exponential", "rate": 1.0 } }]
  },
  "traffic": { "generation": { "kind": "renewal", "inter": { "kind": "erlang", "stages": 2, "rate": 1.6 } } },
  "policies": [{ "kind": "non_prmp_lgfs" }, { "kind": "fcfs", "buffer": "inf" }],
  "horizon": 200.0,
  "replications": 3,
  "seed": 11,
  "nodes": [1]
}"#;

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_g1_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SINGLE_LINK);
    let out = dir.path().join("out");
    let o = aoi(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "run_id,seed,node,policy,metric,value");
    // 3 replications x 2 policies x 1 node x g1
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.contains(",1,") && r.contains(",g1,")));
    assert!(out.join("summary.csv").exists());
    assert!(!out.join("metrics.csv.tmp").exists());
}

#[test]
fn same_config_and_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SINGLE_LINK);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = aoi(&["run", "--config", &cfg, "--seed", "5", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["metrics.csv", "summary.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    aoi(&["run", "--config", &cfg, "--seed", "6", "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(c.join("metrics.csv")).unwrap());
}

#[test]
fn unknown_policy_lists_valid_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SINGLE_LINK.replace("\"fcfs\"", "\"lifo\""));
    let o = aoi(&["run", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for k in ["prmp_lgfs", "non_prmp_lgfs", "fcfs", "non_prmp_lcfs", "infeasible_lb"] {
        assert!(err.contains(k), "{err}");
    }
    assert!(err.contains("line"), "{err}");
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SINGLE_LINK);
    let out = dir.path().to_str().unwrap();
    assert_eq!(aoi(&["run", "--config", &cfg, "--reps", "0", "--out", out]).status.code(), Some(2));
    assert_eq!(aoi(&["sweep", "--config", &cfg, "--out", out]).status.code(), Some(2));
    assert_eq!(aoi(&["reproduce", "fig9"]).status.code(), Some(2));
    let bad = write_config(dir.path(), &SINGLE_LINK.replace("\"nodes\": [1]", "\"nodes\": [7]"));
    let o = aoi(&["run", "--config", &bad, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("node 7"));
}

#[test]
fn sweep_over_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SINGLE_LINK);
    let out = dir.path().join("out");
    let o = aoi(&[
        "sweep", "--config", &cfg, "--lambda", "0.5,2", "--reps", "2", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("lambda,node,policy,metric,n,mean,std_err"));
    // 2 points x 2 policies
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn verify_prints_one_verdict_per_case() {
    let o = aoi(&["verify", "--reps", "4", "--horizon", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 7, "{stdout}");
    assert!(lines.iter().all(|l| l.starts_with("PASS ")));
    assert!(stdout.contains("reflexive"));
    assert!(stdout.contains("(violations expected)"));
}

#[test]
fn verify_failure_exits_3() {
    // far too short for the inverted case to show any violation
    let o = aoi(&["verify", "--reps", "1", "--horizon", "0.1", "--lambda", "0.01"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("FAIL inverted_fcfs_as_candidate"));
}

#[test]
fn schema_round_trips_as_json() {
    let o = aoi(&["schema"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["required"][0], "network");
}
