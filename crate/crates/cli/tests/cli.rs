use std::path::Path;
use std::process::{Command, Output};

fn cis(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cis"))
        .args(args)
        .env("CIS_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sv.csv");
    let out = cis(
        &[
            "run",
            "--model",
            "sv",
            "--n",
            "50",
            "--t",
            "0.5",
            "--seed",
            "3",
            "--out",
            path(&csv),
        ],
        "2",
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("replicate,estimate,weight,n_events,eval_count,aborted")
    );
    assert_eq!(lines.count(), 50);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sv.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["n"], 50);
    assert_eq!(json["config"]["t"], 0.5);
    assert_eq!(json["config"]["x0"], serde_json::json!([1.0, 0.0]));
    assert!(json["summary"]["cost"].as_u64().unwrap() >= 50);
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ou.toml");
    std::fs::write(&cfg, "model = \"ou\"\nmethod = \"sis\"\nn = 10\nm_steps = 4\n").unwrap();
    let csv = dir.path().join("ou.csv");
    let out = cis(&["run", "--config", path(&cfg), "--n", "7", "--out", path(&csv)], "1");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 8);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for (p, threads) in [(&a, "1"), (&b, "8")] {
        let out = cis(
            &["run", "--method", "wgr2", "--n", "300", "--t", "2", "--out", path(p)],
            threads,
        );
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "modle = \"sv\"\n").unwrap();
    let out = cis(&["run", "--config", path(&cfg)], "1");
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("modle"));

    let out = cis(
        &[
            "run",
            "--method",
            "wgr1",
            "--alpha",
            "0.5",
            "--out",
            path(&dir.path().join("x.csv")),
        ],
        "1",
    );
    assert!(!out.status.success());
}

#[test]
fn preset_list_names_all_presets() {
    let out = cis(&["preset", "list"], "1");
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["sv_mean", "cir_density", "sv_horizon", "sv_wagner", "ou_oracle"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn preset_run_writes_one_csv_per_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = cis(
        &["run", "--preset", "sv_mean", "--n", "20", "--out", path(dir.path())],
        "1",
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csvs = std::fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv"))
        .count();
    assert_eq!(csvs, 6);
}

#[test]
fn check_passes() {
    let out = cis(&["check"], "1");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success(), "{text}");
    assert!(text.contains("0 failed"));
    assert!(!text.contains("FAIL"));
}
