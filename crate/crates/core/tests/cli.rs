mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use adr_core::evaluate::{avg_incremental_accuracy, final_accuracy, PerformanceMatrix};
use adr_core::DenseMatrix;
use common::small_config;
use serde_json::Value;

fn adr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adr")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, method: &str) -> PathBuf {
    let path = dir.join("config.json");
    let cfg = small_config(method, 6, 20, 10);
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_metrics_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "adr");
    let out = dir.path().join("out");
    let o = adr(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("adr tasks=3 A_avg="));

    let metrics = read_json(&out.join("metrics.json"));
    for key in ["A_avg", "A_f", "A_l"] {
        let v = metrics[key].as_f64().unwrap_or_else(|| panic!("{key} missing: {metrics}"));
        assert!((0.0..=1.0).contains(&v));
    }
    let matrix = PerformanceMatrix::from_csv(&fs::read_to_string(out.join("matrix.csv")).unwrap()).unwrap();
    assert_eq!(metrics["A_f"].as_f64().unwrap(), final_accuracy(&matrix).unwrap());
    assert_eq!(metrics["A_avg"].as_f64().unwrap(), avg_incremental_accuracy(&matrix).unwrap());
    for sub in ["model", "encoder_bank", "classifier_bank"] {
        assert!(out.join("checkpoints").join(sub).is_dir(), "{sub}");
    }
}

#[test]
fn missing_config_is_an_input_error() {
    let o = adr(&["run", "--config", "/nonexistent/adr.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/adr.json"), "{}", stderr(&o));
}

#[test]
fn overrides_are_recorded_and_unknown_keys_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "adr");
    let out = dir.path().join("out");
    let o = adr(&["run", "--config", s(&cfg), "--out", s(&out), "--override", "gamma=1", "--override", "alpha=2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let record = read_json(&out.join("run_record.json"));
    assert_eq!(record["config"]["gamma"].as_f64(), Some(1.0));
    assert_eq!(record["config"]["alpha"].as_u64(), Some(2));

    let o = adr(&["run", "--config", s(&cfg), "--out", s(&out), "--override", "gama=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gama"), "{}", stderr(&o));
}

#[test]
fn repeated_runs_give_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "adr");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(adr(&["run", "--config", s(&cfg), "--out", s(out)]).status.success());
    }
    assert_eq!(fs::read(a.join("metrics.json")).unwrap(), fs::read(b.join("metrics.json")).unwrap());
    assert_eq!(fs::read(a.join("matrix.csv")).unwrap(), fs::read(b.join("matrix.csv")).unwrap());
}

#[test]
fn runtime_failure_exits_one_and_keeps_partial_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "adr");
    let out = dir.path().join("out");
    let o = adr(&["run", "--config", s(&cfg), "--out", s(&out), "--override", "lr_incremental=1.7976931348623157e308"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let matrix = PerformanceMatrix::from_csv(&fs::read_to_string(out.join("matrix.csv")).unwrap()).unwrap();
    assert!(matrix.row(0).is_some());
}

#[test]
fn validate_bank_passes_fresh_banks_and_names_corrupted_matrices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "adr");
    let out = dir.path().join("out");
    assert!(adr(&["run", "--config", s(&cfg), "--out", s(&out)]).status.success());

    let o = adr(&["validate-bank", "--dir", s(&out)]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS R_0"));
    let bank = out.join("checkpoints").join("encoder_bank");
    assert!(adr(&["validate-bank", "--dir", s(&bank)]).status.success());

    let r1 = bank.join("R_1.bin");
    let mut m = DenseMatrix::load(&r1).unwrap();
    let v = m.get(0, 1);
    m.set(0, 1, v + 5.0);
    m.save(&r1).unwrap();
    let o = adr(&["validate-bank", "--dir", s(&bank)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("R_1"), "{}", stderr(&o));
    assert!(stdout(&o).contains("FAIL R_1"));

    let empty = tempfile::tempdir().unwrap();
    assert_eq!(adr(&["validate-bank", "--dir", s(empty.path())]).status.code(), Some(2));
}

#[test]
fn generated_sbm_runs_as_a_files_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("sbm.json");
    fs::write(
        &spec,
        r#"{"blocks": [20, 20, 20, 20], "p_intra": 0.2, "p_inter": 0.01, "feature_dim": 6, "feature_shift": 2.0, "seed": 1}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    let o = adr(&["gen-sbm", "--config", s(&spec), "--out", s(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["features.tsv", "labels.tsv", "edges.tsv"] {
        assert!(data.join(f).is_file());
    }

    let mut cfg = serde_json::to_value(small_config("bare", 4, 20, 5)).unwrap();
    cfg["dataset"] = serde_json::json!({"files": {"dir": data}});
    let cfg_path = dir.path().join("files.json");
    fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = dir.path().join("out");
    let o = adr(&["run", "--config", s(&cfg_path), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("bare tasks=2"));
}

#[test]
fn report_recomputes_metrics_from_a_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("matrix.csv");
    let m = PerformanceMatrix::from_rows(vec![vec![0.9], vec![0.8, 0.95], vec![0.7, 0.85, 0.925]]).unwrap();
    fs::write(&csv, m.to_csv()).unwrap();
    let o = adr(&["report", "--path", s(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["A_f"].as_f64().unwrap(), final_accuracy(&m).unwrap());
    assert_eq!(report["A_avg"].as_f64().unwrap(), avg_incremental_accuracy(&m).unwrap());

    assert_eq!(adr(&["report", "--path", s(&dir.path().join("none.csv"))]).status.code(), Some(2));
}

#[test]
fn sweep_writes_a_reproducible_table() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = serde_json::json!({
        "base": small_config("adr", 4, 15, 5),
        "gammas": [0.01, 1.0],
        "alphas": [1, 2],
        "seeds": [0, 1],
        "workers": 2
    });
    let path = dir.path().join("sweep.json");
    fs::write(&path, sweep.to_string()).unwrap();

    let mut tables = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = adr(&["sweep", "--config", s(&path), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("gamma,alpha,seed,A_avg_val,A_f_val,status"));
        assert_eq!(lines.count(), 8);

        let summary = read_json(&out.join("sweep_summary.json"));
        let best_line = stdout(&o).lines().find(|l| l.starts_with("best ")).unwrap().to_string();
        let cells = summary["cells"].as_array().unwrap_or_else(|| panic!("{summary}"));
        let max = cells.iter().map(|c| c["mean_a_avg_val"].as_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
        assert!(best_line.ends_with(&format!("A_avg_val={max:.4}")), "{best_line}");
        tables.push(csv);
    }
    assert_eq!(tables[0], tables[1]);

    let o = adr(&["sweep", "--config", s(&path), "--out", s(&dir.path().join("c")), "--override", "gammas=[0.5]"]);
    assert_eq!(o.status.code(), Some(2));
}
