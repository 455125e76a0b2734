use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lyapfind(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyapfind"))
        .args(args)
        .env_remove("LYAPFIND_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn tokenize_matches_golden_stream() {
    let o = lyapfind(&["tokenize", "pendulum_damped"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        stdout(&o).trim(),
        "[SOS, x2, EOS, SOS, +, ×, −, 9, 8, 1, 0, 10^0, sin, x1, ×, −, 2, 0, 0, 0, 10^−1, x2, EOS]"
    );
}

#[test]
fn bench_list_covers_the_suite() {
    let o = lyapfind(&["bench", "list"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    for name in [
        "van_der_pol",
        "poly_2d",
        "poly_3d_i",
        "poly_3d_ii",
        "coupled_10d",
        "pendulum",
        "trig3d",
        "power_3bus",
        "quadrotor",
        "lossy_power_2bus",
        "synthetic_9d",
    ] {
        assert!(out.contains(name), "missing {name}");
    }
    let numbered = out.lines().filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit())).count();
    assert_eq!(numbered, 12);
    assert!(out.contains("ablation/alpha-sweep"));
}

#[test]
fn certify_exit_codes() {
    let o = lyapfind(&["certify", "poly_2d", "9*x1^2 + x2^2"]);
    assert_eq!(o.status.code(), Some(0));
    let c: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(c["verdict"]["kind"], "certified");

    let o = lyapfind(&["certify", "van_der_pol", "x1*x1"]);
    assert_eq!(o.status.code(), Some(1));
    let c: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(c["verdict"]["kind"], "counterexample");

    let o = lyapfind(&["certify", "poly_2d", "9*x1^2 + x2^2", "--max-boxes", "2"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn parse_failures_exit_3() {
    assert_eq!(lyapfind(&["certify", "no_such_system", "x1"]).status.code(), Some(3));
    assert_eq!(lyapfind(&["certify", "poly_2d", "x1 +"]).status.code(), Some(3));
    assert_eq!(lyapfind(&["certify", "poly_2d", "x7"]).status.code(), Some(3));
    assert_eq!(lyapfind(&["tokenize", "/nonexistent/system.json"]).status.code(), Some(3));
}

#[test]
fn falsify_reports_violations() {
    let o = lyapfind(&["falsify", "poly_2d", "9*x1^2 + x2^2", "--falsifier", "random"]);
    assert_eq!(o.status.code(), Some(0));
    let o = lyapfind(&["falsify", "van_der_pol", "x1 - x2", "--falsifier", "random"]);
    assert_eq!(o.status.code(), Some(1));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(!r["counterexamples"].as_array().unwrap().is_empty());
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = lyapfind(&["discover", "poly_2d", "--alpha", "1.5", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = lyapfind(&["discover", "poly_2d", "--preset", "huge", "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, "{\"batch\": \"many\"}").unwrap();
    let o = lyapfind(&["discover", "poly_2d", "--config", cfg.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_epochs_exhausts_with_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let o = lyapfind(&["discover", "poly_2d", "--epochs", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let run = dir.path().join("poly_2d-seed0");
    assert_eq!(fs::read_to_string(run.join("epochs.jsonl")).unwrap(), "");
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["system"], "poly_2d");
    assert_eq!(m["seed"], 0);
    assert_eq!(m["fingerprint"].as_str().unwrap().len(), 64);
    assert_eq!(m["config"]["epochs"], 0);
    assert!(!run.join("found.json").exists());
}

fn discover_poly(out: &Path) -> Output {
    lyapfind(&["discover", "poly_2d", "--epochs", "2", "--out", out.to_str().unwrap()])
}

#[test]
fn discovery_writes_reproducible_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let oa = discover_poly(a.path());
    let ob = discover_poly(b.path());
    assert_eq!(oa.status.code(), ob.status.code());
    let ra = a.path().join("poly_2d-seed0");
    let rb = b.path().join("poly_2d-seed0");
    let la = fs::read_to_string(ra.join("epochs.jsonl")).unwrap();
    assert!(!la.is_empty());
    assert_eq!(la, fs::read_to_string(rb.join("epochs.jsonl")).unwrap());
    assert!(ra.join("checkpoints/final.ckpt").exists());
    if oa.status.code() == Some(0) {
        let found: serde_json::Value = serde_json::from_str(&fs::read_to_string(ra.join("found.json")).unwrap()).unwrap();
        assert_eq!(found["certificate"]["verdict"]["kind"], "certified");
        let expr = found["expression"].as_str().unwrap();
        // The reported expression certifies on its own.
        assert_eq!(lyapfind(&["certify", "poly_2d", expr]).status.code(), Some(0));

        let resumed = lyapfind(&[
            "discover",
            "poly_2d",
            "--epochs",
            "1",
            "--resume",
            ra.join("checkpoints/final.ckpt").to_str().unwrap(),
            "--out",
            b.path().join("resumed").to_str().unwrap(),
        ]);
        assert!(matches!(resumed.status.code(), Some(0 | 1)));
    }
}

#[test]
fn resume_rejects_mismatched_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(lyapfind(&["discover", "poly_2d", "--epochs", "0", "--out", out]).status.code(), Some(1));
    let ck = dir.path().join("poly_2d-seed0/checkpoints/final.ckpt");
    let o = lyapfind(&["discover", "trig3d", "--epochs", "0", "--resume", ck.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn export_smt_writes_a_script() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("v.smt2");
    let o = lyapfind(&["export-smt", "poly_2d", "9*x1^2 + x2^2", "--out", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = fs::read_to_string(p).unwrap();
    assert!(s.contains("(check-sat)"));
    assert!(s.contains("(declare-const x1 Real)") || s.contains("(declare-fun x1 () Real)"));
}
