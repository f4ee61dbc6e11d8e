use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flowlens::store::Counter;

fn flowlens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowlens"))
        .args(args)
        .env("FLOWLENS_LOG", "error")
        .output()
        .expect("spawn flowlens")
}

fn code(args: &[&str]) -> i32 {
    flowlens(args).status.code().expect("exit code")
}

fn ok(args: &[&str]) -> String {
    let out = flowlens(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("l.csv");
    assert_eq!(code(&["gen"]), 2);
    assert_eq!(code(&["no-such-command"]), 2);
    assert_eq!(code(&["classify", "--features", "x.csv", "--method", "spectral", "--out", s(&labels)]), 2);
    assert_eq!(code(&["classify", "--features", "x.csv", "--method", "dbscan", "--eps", "0", "--out", s(&labels)]), 2);
    assert_eq!(code(&["gen", "--rate", "-3", "--out", s(&dir.path().join("t.csv"))]), 2);
    let missing = dir.path().join("nope.csv");
    assert_eq!(code(&["extract", "--trace", s(&missing), "--region", s(&dir.path().join("r.shm"))]), 1);
}

#[test]
fn gen_is_deterministic_and_zero_duration_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        ok(&["gen", "--rate", "50", "--duration", "2", "--seed", "9", "--out", s(p)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(dir.path().join("a.csv.manifest.json").exists());

    let empty = dir.path().join("empty.csv");
    ok(&["gen", "--duration", "0", "--out", s(&empty)]);
    let text = fs::read_to_string(&empty).unwrap();
    assert_eq!(text.lines().count(), 1, "header only: {text}");
}

#[test]
fn extract_keeps_only_requested_signals() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let region = dir.path().join("r.shm");
    let features = dir.path().join("f.csv");
    ok(&["gen", "--rate", "40", "--duration", "3", "--out", s(&trace)]);
    ok(&[
        "extract", "--trace", s(&trace), "--region", s(&region),
        "--signals", "flow_duration", "--features-out", s(&features),
    ]);
    let mut rdr = csv::Reader::from_path(&features).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header.len(), 4 + Counter::COUNT + 5);
    assert!(header.iter().any(|h| h == "flow_duration_mean"), "{header:?}");
    assert!(!header.iter().any(|h| h.starts_with("handshake_rtt")));
    assert!(rdr.records().count() > 0);
}

#[test]
fn shm_dump_of_fresh_region_and_stress() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let region = dir.path().join("r.shm");
    ok(&["gen", "--duration", "0", "--out", s(&trace)]);
    ok(&["extract", "--trace", s(&trace), "--region", s(&region)]);
    let dump = ok(&["shm-dump", "--region", s(&region)]);
    let bits = dump.lines().find(|l| l.starts_with("bit_index")).unwrap();
    assert!(bits.split_whitespace().skip(1).all(|w| w.chars().all(|c| c == '0')), "{bits}");
    assert!(dump.contains("active []"));

    let report = ok(&["shm-dump", "--region", s(&region), "--stress-io", "20000"]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["report"]["torn"], 0);
    assert_eq!(v["report"]["seq_regressions"], 0);
    // the stressed egress is deactivated again afterwards
    let dump = ok(&["shm-dump", "--region", s(&region)]);
    assert!(dump.contains("active []"));
}

#[test]
fn lbsim_single_policy_writes_one_fct_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lb");
    ok(&["lbsim", "--policies", "rlb", "--out-dir", s(&out)]);
    let fcts: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.unwrap().file_name().into_string().ok())
        .filter(|n| n.starts_with("fct_"))
        .collect();
    assert_eq!(fcts, vec!["fct_rlb.csv".to_string()]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["policies"].as_array().unwrap().len(), 1);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn autoscale_oracle_summary_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("as");
    ok(&["autoscale", "--predictor", "oracle", "--seed", "2", "--out-dir", s(&out)]);
    let summary = json(&out.join("summary.json"));
    assert!(summary["server_seconds"].as_f64().unwrap() > 0.0);
    assert!(summary["events"].as_u64().is_some());
    assert_eq!(summary["schema_version"], 1);

    let again = dir.path().join("again");
    ok(&["rerun", "--manifest", s(&out.join("manifest.json")), "--out-dir", s(&again)]);
    for f in ["timeline.csv", "summary.json"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}
