use std::path::Path;
use std::process::{Command, Output};

use ndarray::{array, Array2};
use serde_json::Value;
use wloss::io::{save_matrix_csv, save_vector_csv};

fn wloss(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wloss")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn problem(dir: &Path) -> [String; 6] {
    save_vector_csv(dir.join("mu.csv"), array![0.5, 0.5, 0.0].view()).unwrap();
    save_vector_csv(dir.join("nu.csv"), array![0.0, 0.0, 1.0].view()).unwrap();
    let line = Array2::from_shape_fn((3, 3), |(i, j)| (i as f64 - j as f64).abs());
    save_matrix_csv(dir.join("m.csv"), line.view()).unwrap();
    let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
    ["--mu".into(), p("mu.csv"), "--nu".into(), p("nu.csv"), "--metric".into(), p("m.csv")]
}

#[test]
fn ot_exact_prints_the_cost_and_writes_plan_and_duals() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.csv");
    let duals = dir.path().join("duals.csv");
    let mut args = vec!["ot", "exact"];
    let prob = problem(dir.path());
    args.extend(prob.iter().map(String::as_str));
    args.extend(["--emit-plan", plan.to_str().unwrap(), "--emit-duals", duals.to_str().unwrap()]);
    let text = stdout(&wloss(&args));
    assert_eq!(text.trim().parse::<f64>().unwrap(), 1.5);
    let plan = wloss::io::load_matrix_csv(&plan).unwrap();
    assert_eq!(plan.dim(), (3, 3));
    assert!((plan.column(2).sum() - 1.0).abs() < 1e-12);
    assert_eq!(wloss::io::load_matrix_csv(&duals).unwrap().nrows(), 2);
}

#[test]
fn ot_sinkhorn_and_relaxed_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let prob = problem(dir.path());
    let mut args = vec!["ot", "sinkhorn", "--lambda", "20"];
    args.extend(prob.iter().map(String::as_str));
    let report: Value = serde_json::from_str(&stdout(&wloss(&args))).unwrap();
    let cost = report["transport_cost"].as_f64().unwrap();
    assert!((1.5 - 1e-9..1.6).contains(&cost), "{report}");
    assert!(report["violation"].as_f64().unwrap() <= 1e-9);

    let mut args = vec!["ot", "sinkhorn", "--lambda", "20", "--log-domain"];
    args.extend(prob.iter().map(String::as_str));
    let log: Value = serde_json::from_str(&stdout(&wloss(&args))).unwrap();
    assert!((log["transport_cost"].as_f64().unwrap() - cost).abs() < 1e-8);

    let mut args = vec!["ot", "relaxed", "--lambda", "20", "--gamma-a", "5", "--gamma-b", "5"];
    args.extend(prob.iter().map(String::as_str));
    let report: Value = serde_json::from_str(&stdout(&wloss(&args))).unwrap();
    for key in ["objective", "transport_cost", "kl_a", "kl_b", "entropy", "iters", "residual"] {
        assert!(report.get(key).is_some(), "missing {key} in {report}");
    }
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let mut prob = problem(dir.path());
    prob[1] = dir.path().join("absent.csv").to_str().unwrap().into();
    let mut args = vec!["ot", "exact"];
    args.extend(prob.iter().map(String::as_str));
    let out = wloss(&args);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn train_then_eval_on_a_csv_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    // two separable classes on a line, plus a bias column
    let n = 40;
    let features = Array2::from_shape_fn((n, 2), |(i, j)| {
        if j == 1 {
            1.0
        } else if i % 2 == 0 {
            -1.0
        } else {
            1.0
        }
    });
    let labels = Array2::from_shape_fn((n, 2), |(i, k)| if i % 2 == k { 1.0 } else { 0.0 });
    save_matrix_csv(data.join("features.csv"), features.view()).unwrap();
    save_matrix_csv(data.join("labels.csv"), labels.view()).unwrap();
    let model = dir.path().join("model.json");
    let (d, m) = (data.to_str().unwrap(), model.to_str().unwrap());

    stdout(&wloss(&["train", "--data", d, "--loss", "exact", "--iters", "200", "--lr", "0.5", "--out", m]));
    let json: Value = serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert!(json.is_object());

    let report: Value = serde_json::from_str(&stdout(&wloss(&["eval", "--model", m, "--data", d]))).unwrap();
    assert_eq!(report["argmax_accuracy"].as_f64().unwrap(), 1.0);
    assert!(report["top_k_cost"].as_f64().unwrap() < 0.5);
}

#[test]
fn lattice_experiment_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("lattice.toml");
    std::fs::write(
        &config,
        "grid_sizes = [3]\nnoise_levels = [0.5]\nrepeats = 1\nsamples_per_class = 10\n\
         test_samples_per_class = 10\nloss = \"sinkhorn\"\nlambda = 3.0\n[sgd]\niterations = 20\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let text = stdout(&wloss(&[
        "experiment",
        "lattice",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(text.starts_with("noise,wasserstein,kl,runs,failed\n0.5,"));
    for file in ["cells.csv", "aggregate.csv", "by_noise.csv", "by_grid.csv", "manifest.json"] {
        assert!(out.join(file).is_file(), "{file} missing");
    }
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("lattice.toml");
    std::fs::write(&config, "grid_size = [3]\n").unwrap();
    let out = wloss(&["experiment", "lattice", "--config", config.to_str().unwrap(), "--out", "unused"]);
    assert!(!out.status.success());
}
