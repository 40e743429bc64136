use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"{
  "priors": {"front_particles": 200},
  "user_model": {"particles": 32, "q": 11},
  "acquisition": {"num_curve_candidates": 2, "num_p_candidates": 5, "num_sims": 8, "p_grid_size": 51},
  "loop": {"num_steps": 4, "arm": "random-curve"}
}"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dptradeoff"));
    cmd.env_remove("DPTRADEOFF_CONFIG");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, contents).unwrap();
    path
}

#[test]
fn simulate_writes_a_reproducible_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.json", TINY);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = run(bin().args(["simulate", "--seed", "3", "--config"]).arg(&cfg).arg("--out").arg(out));
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("final epsilon*"));
        assert!(stdout(&o).contains("final regret"));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let record: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(record["seed"], 3);
    assert_eq!(record["arm"], "random-curve");
    assert_eq!(record["metric_trace"].as_array().unwrap().len(), 4);
    assert!(record["final"]["eps_star"].as_f64().unwrap() >= 0.01);
}

#[test]
fn config_path_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.json", &TINY.replace("\"num_steps\": 4", "\"num_steps\": 2"));
    let out = dir.path().join("r.json");
    let o = run(bin().env("DPTRADEOFF_CONFIG", &cfg).args(["simulate", "--out"]).arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let record: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(record["metric_trace"].as_array().unwrap().len(), 2);
}

#[test]
fn invalid_config_reports_field_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{\n  \"loop\": {\n    \"num_stepz\": 3\n  }\n}");
    let o = run(bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("x.json")));
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("num_stepz"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn missing_oracle_table_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tab.json", r#"{"oracle": {"kind": {"type": "tabulated", "path": "nowhere.csv"}}}"#);
    let o = run(bin().args(["simulate", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("x.json")));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nowhere.csv"), "{}", stderr(&o));
}

#[test]
fn batch_aggregates_seeds_and_arms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.json", TINY);
    let records = dir.path().join("records");
    let o = run(bin()
        .args(["batch", "--seeds", "3", "--arms", "random-curve,random-pairs", "--config"])
        .arg(&cfg)
        .arg("--records")
        .arg(&records));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = stdout(&o);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,metric,mean,stderr,n"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    for metric in ["random-curve:regret", "random-pairs:regret", "random-curve:pref_error", "random-pairs:pref_error"] {
        let mine: Vec<_> = rows.iter().filter(|r| r[1] == metric).collect();
        assert_eq!(mine.len(), 4, "{metric}");
        assert!(mine.iter().all(|r| r[4] == "3"));
    }
    assert_eq!(fs::read_dir(&records).unwrap().count(), 6);
}

#[test]
fn batch_with_one_arm_uses_plain_metric_names() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.json", TINY);
    let out = dir.path().join("report.csv");
    let o = run(bin().args(["batch", "--seeds", "2", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("4,regret,")), "{csv}");
}

#[test]
fn batch_rejects_an_empty_seed_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.json", TINY);
    let seeds = write(dir.path(), "seeds.txt", "\n");
    let o = run(bin().args(["batch", "--config"]).arg(&cfg).arg("--seed-file").arg(&seeds));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

fn closed_form_table(rows: usize) -> String {
    let mut s = String::from("epsilon,accuracy\n");
    for i in 0..rows {
        let eps = 0.01 * 50f64.powf(i as f64 / (rows - 1) as f64);
        s.push_str(&format!("{eps},{}\n", 1.0 - 0.5 * (-5.0 * eps).exp()));
    }
    s
}

#[test]
fn fit_recovers_the_closed_form_gompertz() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "cf.csv", &closed_form_table(30));
    let out = dir.path().join("fit.json");
    let o = run(bin().args(["fit", "--kind", "gompertz", "--grid", "21"]).arg(&data).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("residual norm"));
    let fit: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let params = &fit["fit"]["params"];
    assert!((params["b"].as_f64().unwrap() - 1.0).abs() < 0.02, "{params}");
    assert!((params["L"].as_f64().unwrap() - 0.5).abs() < 0.02, "{params}");
    let grid = fit["grid"].as_array().unwrap();
    assert_eq!(grid.len(), 21);
    let eps: Vec<f64> = grid.iter().map(|g| g["epsilon"].as_f64().unwrap()).collect();
    assert!((eps[0] - 0.5).abs() < 1e-12 && (eps[20] - 0.01).abs() < 1e-12, "{eps:?}");
}

#[test]
fn fit_needs_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "short.csv", &closed_form_table(3));
    let o = run(bin().arg("fit").arg(&data));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("at least 4"), "{}", stderr(&o));
}

#[test]
fn fit_names_the_malformed_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "bad.csv", "epsilon,accuracy\n0.1,0.8\n0.2,oops\n0.3,0.9\n0.4,0.95\n");
    let o = run(bin().arg("fit").arg(&data));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("row 3"), "{}", stderr(&o));
}

#[test]
fn oracle_check_default_passes() {
    let o = run(bin().arg("oracle-check"));
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let table = stdout(&o);
    assert_eq!(table.lines().count(), 5);
    assert!(!table.contains("NO"));
}

#[test]
fn oracle_check_with_one_sample_trivially_passes() {
    let o = run(bin().args(["oracle-check", "--samples", "1"]));
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn oracle_check_rejects_nonpositive_c() {
    let o = run(bin().args(["oracle-check", "--c", "0"]));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("C must be positive"), "{}", stderr(&o));
}
