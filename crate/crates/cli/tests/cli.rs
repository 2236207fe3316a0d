use std::path::{Path, PathBuf};
use std::process::Command;

use chdbc_cli::io::read_field_with_mesh;
use chdbc_cli::RunConfig;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chdbc"));
    c.env("RUST_LOG", "warn");
    c
}

fn small(dir: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "[mesh]\nnx = 12\nny = 13\n[solver]\ndt = 1e-3\nt_final = 0.01\n{extra}\n[output]\ndir = \"{}\"\ncheckpoint_every = 5\n",
        dir.join("out").display()
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], config: &Path) -> i32 {
    let status = bin().arg("--config").arg(config).args(args).status().unwrap();
    status.code().unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["--config", "/nonexistent/config.toml", "--out"])
        .arg(&out)
        .arg("run")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    let err = json(&out.join("error.json"));
    assert_eq!(err["code"], "io");
    assert_eq!(err["exit_status"], 2);
}

#[test]
fn invalid_configs_exit_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "[potential]\nkind = \"obstacle\"\nlambda = 0.0");
    assert_eq!(run(&["run"], &cfg), 2);
    let cfg = small(dir.path(), "delta = 0.0");
    assert_eq!(run(&["prep-init"], &cfg), 2);
    let cfg = small(dir.path(), "unknown_key = 1");
    assert_eq!(run(&["run"], &cfg), 2);
    assert_eq!(json(&dir.path().join("out/error.json"))["code"], "invalid_config");
}

#[test]
fn constant_data_keeps_mass_column_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "[initial]\nprofile = \"constant\"\nmean = 0.3");
    assert_eq!(run(&["run"], &cfg), 0);
    let out = dir.path().join("out");
    let rows = csv_rows(&out.join("diagnostics.csv"));
    assert_eq!(rows.len(), 11);
    let masses: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(masses.iter().all(|&m| (m - 0.3).abs() < 1e-15), "{masses:?}");
    assert!(out.join("u_000005.txt").exists());
    let (mesh, u) = read_field_with_mesh(&out.join("u_final.txt")).unwrap();
    assert_eq!(mesh.nx(), 12);
    assert!(u.bulk.iter().all(|&v| (v - 0.3).abs() < 1e-12));
    assert!(!out.join("error.json").exists());
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "[initial]\nprofile = \"random_smooth\"\namplitude = 0.6\nmodes = 3");
    let out = dir.path().join("out/diagnostics.csv");
    assert_eq!(run(&["--seed", "11", "run"], &cfg), 0);
    let first = std::fs::read(&out).unwrap();
    assert_eq!(run(&["--seed", "11", "run"], &cfg), 0);
    assert_eq!(std::fs::read(&out).unwrap(), first);
    assert_eq!(run(&["--seed", "12", "run"], &cfg), 0);
    assert_ne!(std::fs::read(&out).unwrap(), first);
    let status = bin().arg("--config").arg(&cfg).args(["--seed", "9223372036854775808", "run"]).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_delta_and_a_rate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "deltas = [0.25, 0.125, 0.0625, 0.03125]");
    assert_eq!(run(&["--threads", "2", "sweep"], &cfg), 0);
    let out = dir.path().join("out");
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 4);
    let rate = json(&out.join("rate.json"));
    assert!(rate["slope"].as_f64().unwrap() > 0.0);
    assert_eq!(rate["points"], 4);
    assert!(rate["config_hash"].as_str().unwrap().len() == 64);

    let cfg = small(dir.path(), "deltas = [0.1]");
    assert_eq!(run(&["sweep"], &cfg), 0);
    assert_eq!(csv_rows(&out.join("sweep.csv")).len(), 1);
    let rate = json(&out.join("rate.json"));
    assert!(rate["slope"].is_null());
    assert!(rate["fit_error"].is_string());
}

#[test]
fn depcheck_reports_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "[depcheck]\nepsilons = [1e-2, 0.0]\ndeltas = [0.1, 0.0]");
    assert_eq!(run(&["depcheck"], &cfg), 0);
    let report = json(&dir.path().join("out/depcheck.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for r in rows {
        if r["epsilon"] == 0.0 {
            assert_eq!(r["solution_difference"], 0.0);
        } else {
            assert!(r["ratio"].as_f64().unwrap() > 0.0);
        }
    }
    assert!(report["k_empirical"].as_f64().unwrap() > 0.0);
}

#[test]
fn prep_init_of_zero_data_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "deltas = [0.1, 0.01]\n[initial]\nprofile = \"constant\"\nmean = 0.0");
    assert_eq!(run(&["prep-init"], &cfg), 0);
    let out = dir.path().join("out");
    let (_, u) = read_field_with_mesh(&out.join("u0_prepared.txt")).unwrap();
    assert!(u.bulk.iter().chain(&u.boundary).all(|&v| v == 0.0));
    assert_eq!(csv_rows(&out.join("prep_table.csv")).len(), 2);
}

#[test]
fn prep_init_table_decreases_with_delta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "deltas = [0.1, 0.01, 0.001]\n[initial]\nprofile = \"cosine\"\namplitude = 0.5");
    assert_eq!(run(&["prep-init"], &cfg), 0);
    let rows = csv_rows(&dir.path().join("out/prep_table.csv"));
    let errs: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn print_defaults_parses_back() {
    let out = bin().arg("print-defaults").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(RunConfig::from_toml_str(&text).unwrap(), RunConfig::default());
}

#[test]
fn prepared_field_feeds_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), "[initial]\nprofile = \"cosine\"\namplitude = 0.5");
    assert_eq!(run(&["prep-init"], &cfg), 0);
    let field = dir.path().join("out/u0_prepared.txt");
    let moved = dir.path().join("prepared.txt");
    std::fs::rename(&field, &moved).unwrap();
    let cfg = small(dir.path(), &format!("[initial]\nfile = \"{}\"", moved.display()));
    assert_eq!(run(&["run"], &cfg), 0);
    let rows = csv_rows(&dir.path().join("out/diagnostics.csv"));
    let energy: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(energy.windows(2).all(|w| w[1] <= w[0] + 1e-12));

    let cfg = dir.path().join("coarse.toml");
    std::fs::write(
        &cfg,
        format!(
            "[mesh]\nnx = 8\nny = 13\n[initial]\nfile = \"{}\"\n[output]\ndir = \"{}\"\n",
            moved.display(),
            dir.path().join("coarse").display()
        ),
    )
    .unwrap();
    assert_eq!(run(&["run"], &cfg), 2);
    let err = json(&dir.path().join("coarse/error.json"));
    assert!(err["message"].as_str().unwrap().contains("does not match"));
}
