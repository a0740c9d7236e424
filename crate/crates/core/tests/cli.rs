use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const MINIMAL: &str = r#"{"command":"simulate","scenario":{"preset":"two_flock","variant":"cucker_smale","num_elements":100,"k":0.05,"T":2}}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn flocklab(cmd: &str, config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flocklab"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--output-dir")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_simulate_writes_deterministic_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.json", MINIMAL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = flocklab("simulate", &cfg, &a);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    assert_eq!(flocklab("simulate", &cfg, &b).status.code(), Some(0));

    let ts = fs::read_to_string(a.join("timeseries.csv")).unwrap();
    let lines: Vec<&str> = ts.lines().collect();
    assert_eq!(
        lines[0],
        "t,mass,momentum,energy,v2,amplitude,e_min,e_max,rho_min,rho_phi_min,entropy_H,l1_dev,dxu_max"
    );
    let data: Vec<&str> = lines
        .iter()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .copied()
        .collect();
    assert_eq!(data.len(), 41);
    assert!(lines.last().unwrap().starts_with("# config_hash="));
    // the interpolated bumps dip below zero, so the entropy is undefined
    assert_eq!(data[0].split(',').nth(10), Some(""));

    let snaps = fs::read_to_string(a.join("snapshots.csv")).unwrap();
    assert!(snaps.starts_with("t,x,rho,w,u,e\n"));

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("run_meta.json")).unwrap()).unwrap();
    let hash = meta["config_hash"].as_str().unwrap();
    assert_eq!(lines.last().unwrap(), &format!("# config_hash={hash}"));
    assert_eq!(meta["scenario"]["cfl_mode"], "permissive");
    assert_eq!(meta["scenario"]["quad_order"], 6);
    assert!((meta["kernel"]["c1"].as_f64().unwrap() - 0.894_427_190_999_915_9).abs() < 1e-15);

    for name in ["timeseries.csv", "snapshots.csv", "run_meta.json"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs"
        );
    }
    assert!(!a.join(".flocklab.lock").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        r#"{"scenario":{"preset":"two_flock","viscosity":0.1}}"#,
    );
    let out = flocklab("simulate", &cfg, &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("viscosity"), "{}", stderr(&out));
}

#[test]
fn malformed_json_reports_position() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.json",
        "{\"scenario\": {\n  \"preset\": }\n}",
    );
    let out = flocklab("simulate", &cfg, &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn command_mismatch_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.json", MINIMAL);
    assert_eq!(
        flocklab("compare", &cfg, &tmp.path().join("o"))
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn strict_cfl_violation_exits_4() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cfl.json",
        r#"{"scenario":{"preset":"two_flock","num_elements":100,"k":0.01,"T":0.1,"cfl_mode":"strict"}}"#,
    );
    let out = flocklab("simulate", &cfg, &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn failed_run_flushes_partial_output() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "fail.json",
        r#"{"scenario":{"preset":"two_flock","num_elements":40,"k":0.05,"T":0.5,"dxu_cap":0.5}}"#,
    );
    let dir = tmp.path().join("o");
    let out = flocklab("simulate", &cfg, &dir);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let ts = fs::read_to_string(dir.join("timeseries.csv")).unwrap();
    assert!(ts.lines().any(|l| l.starts_with("# FAILED step=0")), "{ts}");
    let meta = fs::read_to_string(dir.join("run_meta.json")).unwrap();
    assert!(meta.contains("\"status\": \"failed\""));
}

#[test]
fn locked_directory_is_refused() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "run.json", MINIMAL);
    let dir = tmp.path().join("o");
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(".flocklab.lock"), "").unwrap();
    let out = flocklab("simulate", &cfg, &dir);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("in use"));
}

#[test]
fn converge_writes_five_rows_and_slopes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "conv.json",
        r#"{"scenario":{"preset":"manufactured"}}"#,
    );
    let dir = tmp.path().join("o");
    let out = flocklab("converge", &cfg, &dir);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "level,h,k,E0,E1");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("2,2.5000000000000000e-1,6.2500000000000000e-2,"));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run_meta.json")).unwrap()).unwrap();
    assert!(meta["results"]["slope_E0"].as_f64().unwrap() >= 1.5);
}

#[test]
fn converge_rejects_two_flock() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "run.json",
        r#"{"scenario":{"preset":"two_flock"}}"#,
    );
    assert_eq!(
        flocklab("converge", &cfg, &tmp.path().join("o"))
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn check_reports_threshold() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "check.json",
        r#"{"scenario":{"preset":"two_flock","variant":"s_model"}}"#,
    );
    let dir = tmp.path().join("o");
    let out = flocklab("check", &cfg, &dir);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("check.json")).unwrap()).unwrap();
    assert_eq!(report["threshold"]["verdict"], "global_existence_predicted");
    assert!(report["threshold"]["e0_min"].as_f64().unwrap() > 0.0);
    assert!(report["entropy_bound"]["error"].is_string());
}

#[test]
fn compare_writes_per_variant_and_pairwise_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cmp.json",
        r#"{"scenario":{"preset":"two_flock","num_elements":40,"k":0.05,"T":0.5,"sample_every":5}}"#,
    );
    let dir = tmp.path().join("o");
    let out = flocklab("compare", &cfg, &dir);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for v in ["cucker_smale", "motsch_tadmor", "s_model"] {
        assert!(dir.join(format!("timeseries_{v}.csv")).exists());
    }
    let cmp = fs::read_to_string(dir.join("comparison.csv")).unwrap();
    // 3 pairs x 3 sampled times
    assert_eq!(cmp.lines().filter(|l| !l.starts_with('#')).count(), 1 + 9);
    assert!(fs::read_to_string(dir.join("small_flock.csv"))
        .unwrap()
        .starts_with("t,variant,mean_abs_u,centroid_shift\n"));
}

#[test]
fn nodal_initial_data_file_is_used() {
    let tmp = TempDir::new().unwrap();
    let mut text = String::from("node_index,rho,w,u\n");
    for i in 0..30 {
        text.push_str(&format!("{i},1.0,1.0,0.0\n"));
    }
    fs::write(tmp.path().join("init.csv"), text).unwrap();
    let cfg = write_config(
        tmp.path(),
        "nodal.json",
        r#"{"scenario":{"preset":"two_flock","num_elements":10,"k":0.05,"T":0.1,"initial_data":"init.csv"}}"#,
    );
    let dir = tmp.path().join("o");
    let out = flocklab("simulate", &cfg, &dir);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ts = fs::read_to_string(dir.join("timeseries.csv")).unwrap();
    let row: Vec<&str> = ts.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "1.0000000000000000e0");
    // uniform positive density: entropy defined and zero
    assert!(row[10].parse::<f64>().unwrap().abs() < 1e-14);
}
