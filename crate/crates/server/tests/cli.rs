use std::path::PathBuf;
use std::process::Command;

use vine_teleop::session::SessionReport;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vine-teleop"));
    cmd.env("RUST_LOG", "warn");
    for (k, _) in std::env::vars() {
        if k.starts_with("VINE_") {
            cmd.env_remove(k);
        }
    }
    cmd
}

fn bundled_trace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/tower3.jsonl")
}

#[test]
fn unreachable_listen_address_exits_nonzero() {
    let out = bin().args(["--listen", "203.0.113.7:8765", "serve"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot listen"));
}

#[test]
fn occupied_port_exits_nonzero() {
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap().to_string();
    let out = bin().env("VINE_LISTEN", &addr).arg("serve").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn replay_prints_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("states.jsonl");
    let out = bin()
        .arg("replay")
        .arg(bundled_trace())
        .arg("--state-log")
        .arg(&log)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: SessionReport = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report.success);
    assert_eq!(report.tower_height, 3);
    let lines = std::fs::read_to_string(&log).unwrap();
    assert_eq!(lines.lines().count() as u64, report.snapshots);
    assert!(lines.lines().all(|l| l.starts_with(r#"{"type":"state""#)));
}

#[test]
fn flags_and_env_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("session.toml");
    std::fs::write(&cfg, "perception_rate = 15.0\n").unwrap();
    let run = |cmd: &mut Command| -> SessionReport {
        let out = cmd.arg("replay").arg(bundled_trace()).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    };
    let default = run(&mut bin());
    let from_file = run(bin().arg("--config").arg(&cfg));
    let from_env = run(bin().arg("--config").arg(&cfg).env("VINE_PERCEPTION_RATE", "30"));
    let from_flag = run(bin().env("VINE_PERCEPTION_RATE", "15").args(["--perception-rate", "30"]));
    assert_eq!(default.snapshots, 1383);
    assert_eq!(from_file.snapshots, 691);
    assert_eq!(from_env, default);
    assert_eq!(from_flag, default);
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "no_such_field = 1\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("replay").arg(bundled_trace()).output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["--command-rate", "7"]).arg("replay").arg(bundled_trace()).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn verify_accepts_the_bundled_trace() {
    let out = bin().arg("verify").arg(bundled_trace()).args(["--transforms", "10", "--seed", "3"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok"));
}

#[test]
fn missing_trace_exits_nonzero() {
    let out = bin().args(["replay", "/nonexistent/trace.jsonl"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn example_config_matches_the_defaults() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config/session.toml");
    let cfg = vine_teleop::SessionConfig::load(&path).unwrap();
    assert_eq!(cfg, vine_teleop::SessionConfig::default());
}
