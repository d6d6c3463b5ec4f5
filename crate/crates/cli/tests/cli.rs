use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn probesched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probesched"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn outputs(out: &Path) -> Vec<String> {
    manifest(out)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}

const SMALL: &str = r#"{
    "users": 6,
    "beta": 0.1,
    "policy": ["jps_dynamic", "jps_static", "jlps", "genie_pf"],
    "static": {"kappa_mode": "bootstrap", "burn_in_slots": 300},
    "n_slots": 2000,
    "n_replications": 3,
    "record_interval": 100,
    "mc_samples": 100000
}"#;

#[test]
fn thresholds_for_beta_one_tenth_has_ten_decreasing_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"users": 20, "beta": 0.1, "static": {"kappa_mode": "fixed(0.0757)"}}"#,
    );
    let out = tmp.path().join("out");
    let o = probesched(&["thresholds", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("thresholds.csv"));
    assert_eq!(rows.len(), 10);
    let v: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(v.windows(2).all(|p| p[1] < p[0]));
    assert!((v[0] - 1.679).abs() < 1e-3);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("thresholds.json")).unwrap()).unwrap();
    assert_eq!(summary["kappa"].as_f64().unwrap(), 0.0757);
    assert_eq!(outputs(&out), ["thresholds.csv", "thresholds.json"]);
}

#[test]
fn thresholds_for_beta_one_half_has_two_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"users": 20, "beta": 0.5, "mc_samples": 100000}"#);
    let out = tmp.path().join("out");
    let o = probesched(&["thresholds", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(csv_rows(&out.join("thresholds.csv")).len(), 2);
}

#[test]
fn invalid_beta_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"beta": 1.5}"#);
    let out = tmp.path().join("out");
    let o = probesched(&["thresholds", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.join("manifest.json").exists());
}

#[test]
fn exit_codes_distinguish_usage_and_io() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.json");
    let o = probesched(&["simulate", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let bad = write_config(tmp.path(), r#"{"users": 4, "colour": "blue"}"#);
    assert_eq!(probesched(&["simulate", "--config", &bad]).status.code(), Some(2));
    assert_eq!(probesched(&["simulate", "--preset", "fig99"]).status.code(), Some(2));
    assert_eq!(probesched(&["simulate", "--threads", "0"]).status.code(), Some(2));
    assert_eq!(probesched(&["frobnicate"]).status.code(), Some(2));

    // sweep without a sweep entry
    let plain = write_config(tmp.path(), r#"{"users": 4, "n_slots": 100}"#);
    let out = tmp.path().join("out");
    let o = probesched(&["sweep", "--config", &plain, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    // output path occupied by a file
    let blocker = tmp.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    let o = probesched(&[
        "thresholds",
        "--config",
        &plain,
        "--out",
        blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn simulate_writes_every_listed_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = probesched(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let listed = outputs(&out);
    assert_eq!(listed.len(), 4 * 5);
    for rel in &listed {
        assert!(out.join(rel).is_file(), "{rel} missing");
    }
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("jps_dynamic/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_replications"], 3);
    assert!(summary["gain"]["mean"].as_f64().unwrap() > 1.0);
    let hist = csv_rows(&out.join("jps_dynamic/probe_hist.csv"));
    let total: u64 = hist.iter().map(|r| r[1].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 2000);
    let m = manifest(&out);
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
}

fn file_bytes(out: &Path) -> Vec<(String, Vec<u8>)> {
    outputs(out)
        .into_iter()
        .map(|rel| {
            let bytes = fs::read(out.join(&rel)).unwrap();
            (rel, bytes)
        })
        .collect()
}

#[test]
fn rerun_from_manifest_is_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    let o = probesched(&[
        "simulate",
        "--config",
        &cfg,
        "--seed",
        "99",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let m = first.join("manifest.json");
    let o = probesched(&[
        "simulate",
        "--config",
        m.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(file_bytes(&first), file_bytes(&second));
    assert_eq!(manifest(&first)["config_hash"], manifest(&second)["config_hash"]);
    assert_eq!(manifest(&second)["seed"], 99);

    // a manifest only replays the command that wrote it
    let o = probesched(&[
        "theory",
        "--config",
        m.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let one = tmp.path().join("one");
    let four = tmp.path().join("four");
    for (dir, threads) in [(&one, "1"), (&four, "4")] {
        let o = probesched(&[
            "simulate",
            "--config",
            &cfg,
            "--threads",
            threads,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    assert_eq!(file_bytes(&one), file_bytes(&four));

    let t1 = tmp.path().join("t1");
    let t4 = tmp.path().join("t4");
    let theory_cfg = write_config(
        tmp.path(),
        r#"{"users": 5, "mc_samples": 100000, "sweep": {"variable": "K", "values": [1, 3, 5]}}"#,
    );
    for (dir, threads) in [(&t1, "1"), (&t4, "4")] {
        let o = probesched(&[
            "theory",
            "--config",
            &theory_cfg,
            "--threads",
            threads,
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(file_bytes(&t1), file_bytes(&t4));
}

#[test]
fn theory_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), r#"{"users": 20, "beta": 0.1, "mc_samples": 100000}"#);
    let out = tmp.path().join("out");
    let o = probesched(&["theory", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let p: Vec<f64> = csv_rows(&out.join("probe_probs.csv"))
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert_eq!(p.len(), 10);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let curves = csv_rows(&out.join("gain_curves.csv"));
    assert_eq!(curves.len(), 30);
    let jps: Vec<f64> = curves.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((jps[0] - 0.9).abs() < 1e-12, "K=1 gain {}", jps[0]);
    // rises, then stays within a narrow band beyond about 9 users
    assert!(jps[4] > jps[1] && jps[1] > jps[0]);
    let tail = &jps[9..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &g| (a.min(g), b.max(g)));
    assert!(hi - lo < 0.02, "tail spread {}", hi - lo);
    let pa: Vec<f64> = curves.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(pa[9..].iter().all(|&g| g == 0.0));

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("theory.json")).unwrap()).unwrap();
    assert_eq!(report["j_max"], 10);
}

#[test]
fn sweep_over_users() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"policy": ["jps_dynamic", "probe_all_pf"], "n_slots": 3000, "n_replications": 2,
            "sweep": {"variable": "K", "values": [2, 5, 12]}}"#,
    );
    let out = tmp.path().join("out");
    let o = probesched(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 6);
    let pa_k12 = rows.iter().find(|r| r[2] == "probe_all_pf" && r[1] == "12").unwrap();
    assert_eq!(pa_k12[3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn presets_load() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("fig4");
    let o = probesched(&["simulate", "--preset", "fig4", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let counts: Vec<u64> = csv_rows(&out.join("jps_dynamic/selection.csv"))
        .iter()
        .map(|r| r[1].parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 20);
    assert_eq!(counts.iter().sum::<u64>(), 2000);
    assert!(counts.iter().all(|&c| (60..=140).contains(&c)), "{counts:?}");
    assert_eq!(manifest(&out)["preset"], "fig4");
}
