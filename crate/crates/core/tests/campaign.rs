//! Campaign-level integration: determinism, persistence, and re-fit identity.

use polytex::pipeline::{
    directory_digest, fit_from_directory, run_campaign, CampaignConfig, SampleStatus,
};

fn small_config(seed: u64) -> CampaignConfig {
    CampaignConfig::from_json(&format!(
        r#"{{
            "seed": {seed},
            "n_samples": 24,
            "grain_count": 12,
            "loading": {{"target_strain": 0.015, "n_steps": 15, "n_output": 16}},
            "pce_degree": 1,
            "train_fraction": 0.75,
            "offsets": [0.002, 0.005]
        }}"#
    ))
    .unwrap()
}

#[test]
fn campaign_layout_and_bookkeeping_are_complete() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("camp");
    let config = small_config(11);
    let result = run_campaign(&config, &out).unwrap();

    assert_eq!(result.samples.len(), 24);
    assert!(result
        .samples
        .iter()
        .all(|s| matches!(s.status, SampleStatus::Ok)));
    // split is disjoint and exhaustive over successful samples
    let mut all: Vec<usize> = result
        .train_indices
        .iter()
        .chain(&result.validation_indices)
        .copied()
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..24).collect::<Vec<_>>());
    assert_eq!(result.train_indices.len(), 18);

    for rel in [
        "manifest.json",
        "pce_model.json",
        "report/band.csv",
        "report/sobol.csv",
        "report/validation.csv",
        "report/summary.txt",
        "report/timing.txt",
        "samples/sample_0000/weights.json",
        "samples/sample_0000/curve.csv",
        "samples/sample_0023/curve.csv",
    ] {
        assert!(out.join(rel).exists(), "missing {rel}");
    }

    // every checksummed artifact verifies
    directory_digest(&out).unwrap();
}

#[test]
fn identical_seed_gives_byte_identical_outputs_across_worker_counts() {
    // worker pools are per-test-process global; determinism across pool sizes
    // rests on ordered reductions, exercised here with an oversubscribed pool
    let config = small_config(13);

    let dir1 = tempfile::tempdir().unwrap();
    let out1 = dir1.path().join("a");
    run_campaign(&config, &out1).unwrap();
    let digest1 = directory_digest(&out1).unwrap();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let out2 = dir2.path().join("b");
    pool.install(|| run_campaign(&config, &out2)).unwrap();
    let digest2 = directory_digest(&out2).unwrap();

    assert_eq!(digest1, digest2);
}

#[test]
fn refit_from_directory_reproduces_the_campaign_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("camp");
    let config = small_config(17);
    let result = run_campaign(&config, &out).unwrap();

    let refit = fit_from_directory(&config, &out).unwrap();
    assert_eq!(refit, result.model);
    // and byte-identical serialization
    assert_eq!(refit.to_json(), result.model.to_json());
}

#[test]
fn degree_zero_campaign_predicts_the_curve_mean() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("camp");
    let mut config = small_config(19);
    config.n_samples = 6;
    config.pce_degree = 0;
    config.train_fraction = 0.67;
    let result = run_campaign(&config, &out).unwrap();

    // constant surrogate: prediction at any input equals the training mean
    let predict_at = polytex::pce::predict(&result.model, &result.samples[0].raw_percent).unwrap();
    for (o, value) in predict_at.iter().enumerate() {
        let mean: f64 = result
            .train_indices
            .iter()
            .map(|&i| result.curves[i].as_ref().unwrap().stress[o])
            .sum::<f64>()
            / result.train_indices.len() as f64;
        assert!((value - mean).abs() < 1e-9, "output {o}: {value} vs {mean}");
    }
}

/// A surrogate with zero variance (constant response) collapses the report
/// band onto the mean and marks the Sobol section as undefined.
#[test]
fn zero_variance_model_reports_undefined_sobol() {
    use polytex::pce;
    use polytex::pipeline::report::write_report;
    use polytex::pipeline::{CampaignResult, CampaignTiming, OffsetStat, SampleRecord};

    // degree-0 fit of constant outputs: variance is exactly zero
    let spec = pce::InputSpec::new(vec![(0.0, 1.0); 8]).unwrap();
    let strain_grid = vec![0.0, 0.001, 0.002];
    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
        .map(|i| (vec![0.1 * i as f64; 8], vec![0.0, 50.0, 100.0]))
        .collect();
    let mut model = pce::fit(&samples, &spec, 0, &strain_grid).unwrap();
    model.input_names = polytex::orientations::COMPONENT_ABBREVS
        .iter()
        .map(|s| s.to_string())
        .collect();

    let config = small_config(23);
    let result = CampaignResult {
        config,
        material: Default::default(),
        samples: (0..4)
            .map(|i| SampleRecord {
                index: i,
                dir: format!("samples/sample_{i:04}"),
                raw_percent: [0.1 * i as f64; 8],
                status: polytex::pipeline::SampleStatus::Ok,
            })
            .collect(),
        curves: (0..4)
            .map(|_| {
                Some(polytex::polycrystal::StressStrainCurve {
                    strain: strain_grid.clone(),
                    stress: vec![0.0, 50.0, 100.0],
                })
            })
            .collect(),
        train_indices: vec![0, 1],
        validation_indices: vec![2, 3],
        moments: pce::moments(&model),
        sobol: (0..3).map(|o| pce::sobol_indices(&model, o).ok()).collect(),
        offset_stats: vec![OffsetStat {
            offset: 0.002,
            mean: 100.0,
            min: 100.0,
            max: 100.0,
            strain_index: Some(2),
            n_draws: 10,
        }],
        validation: pce::validate(&model, &samples).unwrap(),
        timing: CampaignTiming {
            simulation_seconds: 0.0,
            surrogate_fit_seconds: 0.0,
            surrogate_eval_seconds: 0.0,
            surrogate_evals: 0,
        },
        model,
    };

    let dir = tempfile::tempdir().unwrap();
    write_report(&result, dir.path()).unwrap();

    let band = std::fs::read_to_string(dir.path().join("band.csv")).unwrap();
    for line in band.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(fields[2], 0.0); // std collapses
        assert_eq!(fields[1], fields[3]); // lo == mean
        assert_eq!(fields[1], fields[4]); // hi == mean
    }
    let sobol = std::fs::read_to_string(dir.path().join("sobol.csv")).unwrap();
    assert!(sobol.contains("undefined (zero variance)"));
    let summary = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("undefined (zero variance)"));
}
