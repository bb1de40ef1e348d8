use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfpca::cli::{ingest, ModelFile};
use rfpca::diagnostics::curve_diagnostics;
use rfpca::{fit, ModelConfig, Nu};
use tempfile::TempDir;

fn rfpca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfpca")).args(args).env_remove("RFPCA_THREADS").output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let out = rfpca(args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const ITERS: &str = "5000";

fn config(d: usize) -> ModelConfig {
    ModelConfig { max_iter: 5000, ..ModelConfig::new(Nu::CAUCHY, d) }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Long CSV of `n` sine-plus-noise curves with `m` uniform times each.
fn write_curves(dir: &Path, name: &str, n: usize, m: impl Fn(&mut ChaCha8Rng) -> usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("id,time,value\n");
    for i in 0..n {
        let mi = m(&mut rng);
        let z: f64 = rng.random_range(-1.5..1.5);
        for _ in 0..mi {
            let t: f64 = rng.random();
            let v = 1.0 + z * (std::f64::consts::PI * t).sin() + 0.3 * rng.random_range(-1.0..1.0);
            text.push_str(&format!("{i},{t},{v}\n"));
        }
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn csv_column(path: &Path, column: &str) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == column).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

#[test]
fn constant_data_recovers_constant_mean() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("id,time,value\n");
    for i in 0..5 {
        for j in 0..12 {
            text.push_str(&format!("{i},{},7\n", (j as f64 + 0.5 * i as f64) / 14.0));
        }
    }
    let input = dir.path().join("const.csv");
    fs::write(&input, text).unwrap();
    let out = dir.path().join("out");
    run_ok(&["fit", s(&input), "--nu", "inf", "--dim", "0", "--out", s(&out)]);
    let functions = out.join("functions.csv");
    let values = csv_column(&functions, "value");
    assert_eq!(values.len(), 201);
    for v in values {
        assert!((v.parse::<f64>().unwrap() - 7.0).abs() < 1e-6, "{v}");
    }
}

#[test]
fn fit_then_diagnose_reproduces_residual_norms() {
    let dir = TempDir::new().unwrap();
    let input = write_curves(dir.path(), "data.csv", 40, |r| r.random_range(4..=15), 3);
    let fit_out = dir.path().join("fit");
    let diag_out = dir.path().join("diag");
    run_ok(&["fit", s(&input), "--dim", "1", "--max-iter", ITERS, "--out", s(&fit_out)]);
    let model = fit_out.join("model.json");
    run_ok(&["diagnose", s(&input), "--model", s(&model), "--out", s(&diag_out)]);

    let data = ingest(&input, 4, 5, None).unwrap();
    let in_process = fit(&data, &config(1)).unwrap();
    let expected: Vec<String> =
        curve_diagnostics(&in_process.params, &data).unwrap().iter().map(|d| d.residual_norm.to_string()).collect();
    assert_eq!(csv_column(&fit_out.join("diagnostics.csv"), "residual_norm"), expected);
    assert_eq!(csv_column(&diag_out.join("diagnostics.csv"), "residual_norm"), expected);
    for file in ["band.csv", "outliers.csv"] {
        assert!(diag_out.join(file).exists(), "{file}");
    }
    let band = csv::Reader::from_path(diag_out.join("band.csv")).unwrap().into_records().count();
    assert_eq!(band, 201);
}

#[test]
fn model_file_round_trips_exactly() {
    let dir = TempDir::new().unwrap();
    let input = write_curves(dir.path(), "data.csv", 30, |r| r.random_range(5..=12), 11);
    run_ok(&["fit", s(&input), "--dim", "2", "--max-iter", ITERS, "--out", s(dir.path())]);
    let path = dir.path().join("model.json");
    let file = ModelFile::load(&path).unwrap();
    let again = dir.path().join("again.json");
    file.save(&again).unwrap();
    assert_eq!(ModelFile::load(&again).unwrap(), file);
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());

    let data = ingest(&input, 4, 5, None).unwrap();
    let direct = fit(&data, &config(2)).unwrap();
    let params = file.to_params().unwrap();
    assert_eq!(params.theta, direct.params.theta);
    assert_eq!(params.h, direct.params.h);
    assert_eq!(params.lambda, direct.params.lambda);
    assert_eq!(params.sigma2, direct.params.sigma2);
}

#[test]
fn shuffled_rows_give_identical_dataset() {
    let dir = TempDir::new().unwrap();
    let input = write_curves(dir.path(), "sorted.csv", 15, |r| r.random_range(2..=9), 5);
    let text = fs::read_to_string(&input).unwrap();
    let mut lines: Vec<&str> = text.lines().skip(1).collect();
    lines.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
    let shuffled = dir.path().join("shuffled.csv");
    fs::write(&shuffled, format!("id,time,value\n{}\n", lines.join("\n"))).unwrap();
    let a = ingest(&input, 4, 5, None).unwrap();
    let b = ingest(&shuffled, 4, 5, None).unwrap();
    assert_eq!(a.curves(), b.curves());
    assert_eq!(a.basis(), b.basis());
}

#[test]
fn sparse_cohort_with_wide_m_range_ingests_and_fits() {
    let dir = TempDir::new().unwrap();
    let input = write_curves(dir.path(), "cohort.csv", 139, |r| r.random_range(2..=56), 21);
    let data = ingest(&input, 4, 5, None).unwrap();
    assert_eq!(data.len(), 139);
    let sizes: Vec<usize> = data.curves().iter().map(|c| c.len()).collect();
    assert!(sizes.iter().all(|m| (2..=56).contains(m)));
    run_ok(&["fit", s(&input), "--dim", "2", "--max-iter", ITERS, "--out", s(dir.path())]);
}

#[test]
fn iteration_limit_exits_two_with_artifacts() {
    let dir = TempDir::new().unwrap();
    let input = write_curves(dir.path(), "data.csv", 20, |r| r.random_range(4..=10), 9);
    let out = rfpca(&["fit", s(&input), "--dim", "1", "--max-iter", "1", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    for file in ["model.json", "diagnostics.csv", "functions.csv"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    assert!(!ModelFile::load(&dir.path().join("model.json")).unwrap().fit.converged);
}

#[test]
fn select_writes_report() {
    let dir = TempDir::new().unwrap();
    let input = write_curves(dir.path(), "data.csv", 40, |r| r.random_range(6..=14), 13);
    run_ok(&["select", s(&input), "--dmax", "2", "--max-iter", ITERS, "--out", s(dir.path())]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("selection.json")).unwrap()).unwrap();
    assert_eq!(report["per_d"].as_array().unwrap().len(), 3);
    assert!(report["chosen_d"].as_u64().unwrap() <= 2);

    let fit_dir = dir.path().join("fit");
    run_ok(&["fit", s(&input), "--dmax", "2", "--max-iter", ITERS, "--out", s(&fit_dir)]);
    let model = ModelFile::load(&fit_dir.join("model.json")).unwrap();
    assert_eq!(model.d as u64, report["chosen_d"].as_u64().unwrap());
}

#[test]
fn usage_errors() {
    let dir = TempDir::new().unwrap();
    let input = write_curves(dir.path(), "data.csv", 10, |r| r.random_range(3..=6), 2);
    assert_eq!(rfpca(&["fit", s(&input), "--dim", "1", "--dmax", "2"]).status.code(), Some(64));
    assert_eq!(rfpca(&["fit", s(&input), "--bogus"]).status.code(), Some(64));
    assert_eq!(rfpca(&["simulate"]).status.code(), Some(64));
    assert_eq!(rfpca(&["--help"]).status.code(), Some(0));
    let bad_threads = Command::new(env!("CARGO_BIN_EXE_rfpca"))
        .args(["fit", s(&input), "--out", s(dir.path())])
        .env("RFPCA_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(64));
    let one_thread = Command::new(env!("CARGO_BIN_EXE_rfpca"))
        .args(["fit", s(&input), "--max-iter", ITERS, "--out", s(dir.path())])
        .env("RFPCA_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(one_thread.status.code(), Some(0));
}

#[test]
fn data_errors_are_reported() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "id,time,value\n1,0.5,abc\n").unwrap();
    let out = rfpca(&["fit", s(&bad), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"), "{}", String::from_utf8_lossy(&out.stderr));

    let header = dir.path().join("header.csv");
    fs::write(&header, "subject,t,y\n1,0.5,1\n").unwrap();
    assert_eq!(rfpca(&["fit", s(&header), "--out", s(dir.path())]).status.code(), Some(1));
}

#[test]
fn diagnose_rejects_data_outside_model_basis() {
    let dir = TempDir::new().unwrap();
    let input = write_curves(dir.path(), "data.csv", 20, |r| r.random_range(4..=10), 4);
    run_ok(&["fit", s(&input), "--domain", "0,1", "--max-iter", ITERS, "--out", s(dir.path())]);
    let wide = dir.path().join("wide.csv");
    fs::write(&wide, "id,time,value\n1,0.2,1\n1,3.5,2\n").unwrap();
    let out = rfpca(&["diagnose", s(&wide), "--model", s(&dir.path().join("model.json")), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let status = rfpca(&["simulate", "--table", "1", "--reps", "200", "--seed", "7", "--out", s(out)]).status;
        assert!(matches!(status.code(), Some(0 | 2)), "{status:?}");
    }
    for file in ["table1.csv", "table1_long.csv"] {
        let (x, y) = (fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap());
        assert!(!x.is_empty());
        assert_eq!(x, y, "{file} differs between runs");
    }
}
