use std::path::Path;
use std::process::{Command, Output};

use qlocomp::io::{read_channel, read_state};
use serde_json::Value;

fn qlocomp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlocomp"))
        .args(args)
        .args(["--quiet", "--restarts", "6"])
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn planted_state_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let gen = qlocomp(&["gen", "planted", "--blocks", "1x1,2x1,1x2", "--out", "p.json"], dir.path());
    assert!(gen.status.success());
    let truth: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["d_min"], 4);

    let out = qlocomp(&["analyze", "p.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = json(&out);
    assert_eq!(r["schema"], "qlocomp/1");
    assert_eq!(r["d_min_theorem1"], 4);
    assert_eq!(r["d_min_oracle"], 4);
    assert_eq!(r["rankC"], 6);
    assert!(r["roundtrip_error"].as_f64().unwrap() < 1e-8);

    let out = qlocomp(&["compress", "p.json", "--out-dir", "c"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let c = dir.path().join("c");
    let e = read_channel(&std::fs::read_to_string(c.join("compression.json")).unwrap()).unwrap();
    let rec = read_channel(&std::fs::read_to_string(c.join("recovery.json")).unwrap()).unwrap();
    assert_eq!((e.da_in, e.db_out), (5, 4));
    assert_eq!((rec.da_in, rec.db_out), (4, 5));
    let (dims, _) = read_state(&std::fs::read_to_string(c.join("compressed_state.json")).unwrap()).unwrap();
    assert_eq!((dims.da, dims.db), (2, 4));
    assert!(c.join("report.json").exists());
}

#[test]
fn bell_state_bounds_and_refusal() {
    let dir = tempfile::tempdir().unwrap();
    assert!(qlocomp(&["gen", "pure", "--schmidt", "2", "--out", "bell.json"], dir.path()).status.success());
    let b = json(&qlocomp(&["bounds", "bell.json"], dir.path()));
    assert_eq!(b["rankC"], 4);
    assert_eq!((b["bounds"]["lower"].as_u64(), b["bounds"]["upper"].as_u64()), (Some(2), Some(4)));
    assert!(b.get("d_min_theorem1").is_none());

    let out = qlocomp(&["compress", "bell.json", "--out-dir", "c"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no nontrivial compression"));
    assert!(!dir.path().join("c").exists());
    let out = qlocomp(&["compress", "bell.json", "--out-dir", "c", "--force"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn input_errors_exit_one_with_position() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"dims\": {\"dA\": 2, \"dB\": 2},\n \"rho\": [[[1,0]],, }").unwrap();
    let out = qlocomp(&["analyze", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("column"), "{err}");

    // not positive semidefinite
    std::fs::write(
        dir.path().join("neg.json"),
        r#"{"dims": {"dA": 1, "dB": 2}, "rho": [[[1.5,0],[0,0]],[[0,0],[-0.5,0]]]}"#,
    )
    .unwrap();
    assert_eq!(qlocomp(&["analyze", "neg.json"], dir.path()).status.code(), Some(1));
    assert_eq!(qlocomp(&["analyze", "missing.json"], dir.path()).status.code(), Some(1));
}

#[test]
fn channels_and_twirls() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("z2.json"),
        r#"{"unitaries": [[[[1,0],[0,0]],[[0,0],[1,0]]], [[[0,0],[1,0]],[[1,0],[0,0]]]]}"#,
    )
    .unwrap();
    let r = json(&qlocomp(&["channel", "twirl", "z2.json"], dir.path()));
    assert_eq!(r["d_min_theorem1"], 2);
    assert_eq!(r["channel"]["unital"], true);

    std::fs::write(
        dir.path().join("id.json"),
        r#"{"dA": 3, "dB": 3, "kraus": [[[[1,0],[0,0],[0,0]],[[0,0],[1,0],[0,0]],[[0,0],[0,0],[1,0]]]]}"#,
    )
    .unwrap();
    let r = json(&qlocomp(&["channel", "analyze", "id.json"], dir.path()));
    assert_eq!(r["d_min_oracle"], 3);
    assert_eq!(r["channel"]["d_min_unital_shortcut"], 3);

    std::fs::write(dir.path().join("leaky.json"), r#"{"dA": 1, "dB": 1, "kraus": [[[[0.5,0]]]]}"#).unwrap();
    assert_eq!(qlocomp(&["channel", "analyze", "leaky.json"], dir.path()).status.code(), Some(1));
}

#[test]
fn seeded_runs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = qlocomp(&["gen", "classical", "--db", "4", "--classes", "2", "--seed", "7"], dir.path());
    let b = qlocomp(&["gen", "classical", "--db", "4", "--classes", "2", "--seed", "7"], dir.path());
    assert_eq!(a.stdout, b.stdout);
    std::fs::write(dir.path().join("c.json"), &a.stdout).unwrap();
    let strip = |o: Output| {
        let mut v = json(&o);
        v.as_object_mut().unwrap().remove("timings");
        assert_eq!(v["d_min_theorem1"], 2);
        v
    };
    let r1 = strip(qlocomp(&["analyze", "c.json", "--seed", "7"], dir.path()));
    let r2 = strip(qlocomp(&["analyze", "c.json", "--seed", "7", "--threads", "2"], dir.path()));
    assert_eq!(r1, r2);
}

#[test]
fn quick_selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = qlocomp(&["selftest", "--quick"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.lines().all(|l| !l.starts_with("FAIL")));
}
