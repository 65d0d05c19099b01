use std::path::Path;
use std::process::{Command, Output};

fn lasermm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lasermm")).args(args).env_remove("LASERMM_CACHE_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn verify_identity_exit_codes() {
    let ok = lasermm(&["verify-identity", "--q", "6"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).contains("8 rank-one terms"));
    for tamper in ["flip-sign", "perturb-scalar"] {
        let bad = lasermm(&["verify-identity", "--q", "6", "--tamper", tamper]);
        assert_eq!(bad.status.code(), Some(1), "{tamper}");
    }
    let json = lasermm(&["verify-identity", "--q", "2", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(lasermm(&["verify-identity", "--q", "0"]).status.code(), Some(2));
    assert_eq!(lasermm(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(lasermm(&["bound", "--q", "5", "--r", "9", "--method", "laser-lower"]).status.code(), Some(2));
    assert_eq!(lasermm(&["reproduce-tables", "--q-min", "4", "--q-max", "2"]).status.code(), Some(2));
    assert_eq!(lasermm(&["oracle", "vcw", "--q", "2", "--rho", "3.5"]).status.code(), Some(2));
    assert_eq!(lasermm(&["--restarts", "0", "bound", "--q", "5", "--method", "merging-ub"]).status.code(), Some(2));
}

#[test]
fn oracle_refusal_is_a_computation_error() {
    let o = lasermm(&["oracle", "vcw", "--q", "2", "--n", "5", "--rho", "2.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("limit"));
}

#[test]
fn bound_json_record() {
    let o = lasermm(&["bound", "--q", "5", "--method", "merging-ub", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["method"], "merging-ub-general");
    assert_eq!(v["q"], 5);
    let rho = v["rho"].as_f64().unwrap();
    assert!((rho - 2.3078).abs() < 1e-4);
    assert!(v["distribution"].as_array().unwrap().len() == 6);
}

#[test]
fn oracle_commands() {
    let o = lasermm(&["oracle", "vcw", "--q", "2", "--rho", "2.5"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("A={0,2} B={0,1} C={0,1}"));
    let o = lasermm(&["oracle", "coherence", "--q", "2", "--n", "2", "--max-size", "3", "--format", "json"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["violations"].as_array().unwrap().len(), 0);
    assert_eq!(v["kind"], "oracle-coherence");
}

#[test]
fn schonhage_digits() {
    let o = lasermm(&["schonhage"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("rho=2.5479929"));
}

fn tables(extra: &[&str], cache: &Path) -> String {
    let mut args = vec!["--cache-dir", cache.to_str().unwrap(), "reproduce-tables", "--q-min", "4", "--q-max", "6", "--r-max", "1", "--format", "csv"];
    args.extend_from_slice(extra);
    let o = lasermm(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

#[test]
fn csv_is_deterministic_across_jobs_and_cache_state() {
    let dir = tempfile::tempdir().unwrap();
    let cold = tables(&["--jobs", "1"], dir.path());
    assert!(dir.path().join("values.jsonl").exists());
    let warm = tables(&["--jobs", "3"], dir.path());
    assert_eq!(cold, warm);
    let lines: Vec<&str> = cold.lines().collect();
    assert_eq!(lines[0], "q,r,method,rho,target,status,seconds");
    assert_eq!(lines.len(), 1 + 3 * 2 * 2);
    assert!(lines.contains(&"6,0,laser-lower,2.3871899,8,ok,"));
    let show = lasermm(&["--cache-dir", dir.path().to_str().unwrap(), "cache", "show"]);
    assert!(stdout(&show).contains("entries"));
    let clear = lasermm(&["--cache-dir", dir.path().to_str().unwrap(), "cache", "clear"]);
    assert_eq!(clear.status.code(), Some(0));
    assert!(!dir.path().join("values.jsonl").exists());
}

#[test]
fn cache_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lasermm"))
        .args(["bound", "--q", "3", "--r", "1", "--method", "laser-lower"])
        .env("LASERMM_CACHE_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("values.jsonl").exists());
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    let out = dir.path().join("grid.csv");
    std::fs::write(&cfg, format!("# small grid\nq-min = 5\nq_max = 6\nr_max = 0\nformat = csv\nout = {}\n", out.display())).unwrap();
    let o = lasermm(&["--config", cfg.to_str().unwrap(), "reproduce-tables", "--q-max", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "flag q_max = 5 overrides the file: {text}");
    assert!(rows.iter().all(|r| r.starts_with("5,0,")));

    std::fs::write(&cfg, "colour = red\n").unwrap();
    let o = lasermm(&["--config", cfg.to_str().unwrap(), "schonhage"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_and_skipped_cells() {
    let o = lasermm(&["reproduce-tables", "--q-min", "2", "--q-max", "2", "--r-min", "1", "--r-max", "0", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "q,r,method,rho,target,status,seconds\n");
    let o = lasermm(&["reproduce-tables", "--q-min", "2", "--q-max", "2", "--r-max", "1", "--lower-depth", "0", "--methods", "laser-lower", "--format", "csv"]);
    let s = stdout(&o);
    assert!(s.contains("2,1,laser-lower,,16,skipped,"), "{s}");
}
