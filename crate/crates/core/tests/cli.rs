//! End-to-end checks of the command-line interface and its exit codes.

use std::path::Path;
use std::process::Command;

fn polytex() -> Command {
    Command::new(env!("CARGO_BIN_EXE_polytex"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const SMALL_CONFIG: &str = r#"{
    "seed": 5,
    "n_samples": 24,
    "grain_count": 10,
    "loading": {"target_strain": 0.012, "n_steps": 12, "n_output": 13},
    "pce_degree": 1,
    "train_fraction": 0.75,
    "offsets": [0.002]
}"#;

#[test]
fn simulate_with_zero_weights_writes_random_texture_curve() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(&config, SMALL_CONFIG);
    let out = dir.path().join("sim");
    let status = polytex()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let curve = std::fs::read_to_string(out.join("curve.csv")).unwrap();
    assert!(curve.starts_with("strain,stress_mpa\n"));
    assert_eq!(curve.lines().count(), 14); // header + 13 grid points
    let weights = std::fs::read_to_string(out.join("weights.json")).unwrap();
    assert!(weights.contains("\"random_fraction\": 1.0"));
}

#[test]
fn unknown_flag_exits_with_usage_code() {
    let status = polytex().args(["simulate", "--nope"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn malformed_config_exits_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(&config, r#"{"unknown_key": 3}"#);
    let status = polytex()
        .args(["sample", "--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn infeasible_regression_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    // 4 samples cannot support 9 degree-1 basis terms
    write(
        &config,
        r#"{
            "seed": 5, "n_samples": 4, "grain_count": 4,
            "loading": {"target_strain": 0.005, "n_steps": 5, "n_output": 6},
            "pce_degree": 1, "train_fraction": 0.8
        }"#,
    );
    let status = polytex()
        .args(["campaign", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.path().join("camp"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn fit_pce_reproduces_campaign_model_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(&config, SMALL_CONFIG);
    let camp = dir.path().join("camp");
    let status = polytex()
        .args(["campaign", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&camp)
        .status()
        .unwrap();
    assert!(status.success());

    let refit = dir.path().join("refit");
    let status = polytex()
        .args(["fit-pce", "--config"])
        .arg(&config)
        .arg("--from")
        .arg(&camp)
        .arg("--out")
        .arg(&refit)
        .status()
        .unwrap();
    assert!(status.success());

    let original = std::fs::read(camp.join("pce_model.json")).unwrap();
    let refitted = std::fs::read(refit.join("pce_model.json")).unwrap();
    assert_eq!(original, refitted);
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    write(&config, SMALL_CONFIG);
    let run = |seed: &str, out: &Path| {
        let status = polytex()
            .args(["sample", "--config"])
            .arg(&config)
            .args(["--seed", seed, "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read_to_string(out.join("samples.csv")).unwrap()
    };
    let a = run("100", &dir.path().join("a"));
    let b = run("100", &dir.path().join("b"));
    let c = run("101", &dir.path().join("c"));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

/// `analyze` on a stored surrogate of the Ishigami function reports the
/// analytic sensitivity ordering.
#[test]
fn analyze_reports_ishigami_indices() {
    use polytex::pce;
    use polytex::rng::stream_rng;
    use polytex::sampling::latin_hypercube;

    let pi = std::f64::consts::PI;
    let spec = pce::InputSpec::new(vec![(-pi, pi); 3]).unwrap();
    let f = |x: &[f64]| x[0].sin() + 7.0 * x[1].sin().powi(2) + 0.1 * x[2].powi(4) * x[0].sin();
    let mut rng = stream_rng(23, "ishigami-cli", 0);
    let samples: Vec<(Vec<f64>, Vec<f64>)> = latin_hypercube(&spec.bounds, 2000, &mut rng)
        .into_iter()
        .map(|raw| {
            let y = f(&raw);
            (raw, vec![y])
        })
        .collect();
    let model = pce::fit(&samples, &spec, 9, &[0.0]).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("pce_model.json");
    model.save(&model_path).unwrap();

    let out = dir.path().join("analysis");
    let output = polytex()
        .args(["analyze", "--model"])
        .arg(&model_path)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());

    let sobol = std::fs::read_to_string(out.join("sobol.csv")).unwrap();
    let mut values = Vec::new();
    for line in sobol.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        values.push(fields[2].parse::<f64>().unwrap());
    }
    assert_eq!(values.len(), 3);
    assert!((values[0] - 0.3139).abs() < 0.02, "S1 = {}", values[0]);
    assert!((values[1] - 0.4424).abs() < 0.02, "S2 = {}", values[1]);
    assert!(values[2].abs() < 0.02, "S3 = {}", values[2]);
}
