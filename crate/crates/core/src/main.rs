//! Command-line driver for texture-uncertainty campaigns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polytex::calibrate::{
    calibrate, CalibrationSimConfig, CalibrationSpec, FreeParameter,
};
use polytex::cpcore::CrystalModel;
use polytex::orientations::{
    normalize_weights, sample_weight_vectors, COMPONENT_ABBREVS, N_COMPONENTS,
};
use polytex::pce::{self, PceModel};
use polytex::pipeline::{
    config::default_free_parameters, fit_from_directory, resolve_material, run_campaign,
    simulate_sample_with_artifacts, CampaignConfig, PipelineError, WeightsFile,
};
use polytex::polycrystal::{realization_study, StressStrainCurve};
use polytex::rng::stream_rng;
use polytex::rvefem::mesh_convergence_study;

#[derive(Parser)]
#[command(
    name = "polytex",
    about = "Texture-driven uncertainty quantification for polycrystal plasticity",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Campaign configuration JSON (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker-thread count; overrides POLYTEX_WORKERS and the config value.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one stress-strain curve from a texture-weights JSON.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// JSON map of component percentages, e.g. {"Cb": 25.0}; all-zero
        /// (fully random texture) when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Emit a Latin-hypercube design of texture-weight samples.
    Sample {
        #[command(flatten)]
        common: Common,
    },
    /// Run the full uncertainty-quantification campaign.
    Campaign {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the surrogate from an existing campaign directory.
    FitPce {
        #[command(flatten)]
        common: Common,
        /// Campaign directory holding manifest.json and samples/.
        #[arg(long)]
        from: PathBuf,
    },
    /// Moments and Sobol indices of a stored surrogate model.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Path to a pce_model.json.
        #[arg(long)]
        model: PathBuf,
    },
    /// Calibrate constitutive parameters against a reference curve.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Reference curve CSV with header strain,stress_mpa.
        #[arg(long)]
        reference: PathBuf,
        /// Calibration spec JSON (free parameters, budget, tolerance).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Mesh-refinement study on a fixed grain population (FE solver).
    MeshStudy {
        #[command(flatten)]
        common: Common,
        /// Comma-separated elements-per-edge levels.
        #[arg(long, default_value = "5,8,10")]
        refinements: String,
        #[arg(long, default_value_t = 25)]
        grains: usize,
        /// RVE cube edge, micrometers.
        #[arg(long, default_value_t = 40.0)]
        edge: f64,
        /// Comma-separated strains the flow stress is reported at.
        #[arg(long, default_value = "0.01")]
        report_strains: String,
    },
    /// Offset-stress variability over repeated random-texture realizations.
    RealizationStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "25,190,615")]
        grain_counts: String,
        #[arg(long, default_value_t = 20)]
        realizations: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's default exit code for usage errors is 2; the CLI contract
            // reserves 2 for numerical failures
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Loads the config and applies CLI overrides (seed, workers).
fn resolve_config(common: &Common) -> Result<CampaignConfig, PipelineError> {
    let mut config = match &common.config {
        Some(path) => CampaignConfig::load(path)?,
        None => CampaignConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(workers) = common.workers {
        config.workers = Some(workers);
    } else if let Ok(var) = std::env::var("POLYTEX_WORKERS") {
        let parsed = var.parse::<usize>().map_err(|_| {
            PipelineError::Config(format!("POLYTEX_WORKERS = {var:?} is not a thread count"))
        })?;
        config.workers = Some(parsed);
    }
    if let Some(workers) = config.workers {
        // ignore the error when a pool already exists (repeat invocations)
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { common, weights } => cmd_simulate(&common, weights.as_deref()),
        Command::Sample { common } => cmd_sample(&common),
        Command::Campaign { common } => cmd_campaign(&common),
        Command::FitPce { common, from } => cmd_fit_pce(&common, &from),
        Command::Analyze { common, model } => cmd_analyze(&common, &model),
        Command::Calibrate {
            common,
            reference,
            spec,
        } => cmd_calibrate(&common, &reference, spec.as_deref()),
        Command::MeshStudy {
            common,
            refinements,
            grains,
            edge,
            report_strains,
        } => cmd_mesh_study(&common, &refinements, grains, edge, &report_strains),
        Command::RealizationStudy {
            common,
            grain_counts,
            realizations,
        } => cmd_realization_study(&common, &grain_counts, realizations),
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, PipelineError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| PipelineError::Config(format!("cannot parse {what} entry {s:?}")))
        })
        .collect()
}

fn cmd_simulate(common: &Common, weights_path: Option<&Path>) -> Result<(), PipelineError> {
    let config = resolve_config(common)?;
    let raw = match weights_path {
        None => [0.0; N_COMPONENTS],
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let map: BTreeMap<String, f64> = serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("weights parse: {e}")))?;
            let mut raw = [0.0; N_COMPONENTS];
            for (name, value) in &map {
                let idx = COMPONENT_ABBREVS
                    .iter()
                    .position(|&a| a == name)
                    .ok_or_else(|| {
                        PipelineError::Config(format!("unknown texture component {name:?}"))
                    })?;
                raw[idx] = *value;
            }
            raw
        }
    };
    let material = resolve_material(&config)?;
    let model =
        CrystalModel::new(material).map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::create_dir_all(&common.out)?;
    let curve = simulate_sample_with_artifacts(&config, &model, &raw, 0, &common.out)?;
    curve.save_csv(&common.out.join("curve.csv"))?;
    let weights_json = serde_json::to_string_pretty(&WeightsFile::new(&raw)).expect("weights");
    std::fs::write(common.out.join("weights.json"), weights_json)?;
    eprintln!(
        "[polytex] simulate: wrote {} ({} strain points)",
        common.out.join("curve.csv").display(),
        curve.strain.len()
    );
    Ok(())
}

fn cmd_sample(common: &Common) -> Result<(), PipelineError> {
    let config = resolve_config(common)?;
    let bounds = config.bounds()?;
    let mut rng = stream_rng(config.seed, "campaign-weights", 0);
    let raws = sample_weight_vectors(&bounds, config.n_samples, &mut rng);
    std::fs::create_dir_all(&common.out)?;

    let mut csv = String::from("index");
    for name in COMPONENT_ABBREVS {
        csv.push_str(&format!(",{name}_raw_pct"));
    }
    for name in COMPONENT_ABBREVS {
        csv.push_str(&format!(",{name}_fraction"));
    }
    csv.push_str(",random_fraction\n");
    for (i, raw) in raws.iter().enumerate() {
        let w = normalize_weights(raw);
        csv.push_str(&format!("{i}"));
        for v in raw {
            csv.push_str(&format!(",{v}"));
        }
        for v in &w.fractions {
            csv.push_str(&format!(",{v}"));
        }
        csv.push_str(&format!(",{}\n", w.random_fraction()));
    }
    std::fs::write(common.out.join("samples.csv"), csv)?;
    eprintln!(
        "[polytex] sample: wrote {} ({} samples)",
        common.out.join("samples.csv").display(),
        raws.len()
    );
    Ok(())
}

fn cmd_campaign(common: &Common) -> Result<(), PipelineError> {
    let config = resolve_config(common)?;
    eprintln!(
        "[polytex] campaign: {} samples, {} grains, simulator {:?}, seed {}",
        config.n_samples, config.grain_count, config.simulator, config.seed
    );
    let result = run_campaign(&config, &common.out)?;
    eprintln!(
        "[polytex] campaign finished: validation R^2 min {:.4} mean {:.4}; outputs in {}",
        result.validation.min_r2,
        result.validation.mean_r2,
        common.out.display()
    );
    Ok(())
}

fn cmd_fit_pce(common: &Common, from: &Path) -> Result<(), PipelineError> {
    let config = resolve_config(common)?;
    let model = fit_from_directory(&config, from)?;
    std::fs::create_dir_all(&common.out)?;
    model.save(&common.out.join("pce_model.json"))?;
    eprintln!(
        "[polytex] fit-pce: wrote {} ({} basis terms)",
        common.out.join("pce_model.json").display(),
        model.n_basis()
    );
    Ok(())
}

fn cmd_analyze(common: &Common, model_path: &Path) -> Result<(), PipelineError> {
    let _ = resolve_config(common)?;
    let model = PceModel::load(model_path)?;
    std::fs::create_dir_all(&common.out)?;

    let moments = pce::moments(&model);
    let mut moments_csv = String::from("strain,mean,std\n");
    for (i, &strain) in model.strain_grid.iter().enumerate() {
        let (mean, var) = moments[i];
        moments_csv.push_str(&format!("{strain},{mean},{}\n", var.max(0.0).sqrt()));
    }
    std::fs::write(common.out.join("moments.csv"), moments_csv)?;

    let mut sobol_csv = String::from("strain,input,first_order,total\n");
    println!("output  input        first-order    total");
    for (o, &strain) in model.strain_grid.iter().enumerate() {
        match pce::sobol_indices(&model, o) {
            Ok(point) => {
                for k in 0..point.first_order.len() {
                    sobol_csv.push_str(&format!(
                        "{strain},{},{},{}\n",
                        model.input_name(k),
                        point.first_order[k],
                        point.total[k]
                    ));
                    println!(
                        "{o:<7} {:<12} {:<14.4} {:.4}",
                        model.input_name(k),
                        point.first_order[k],
                        point.total[k]
                    );
                }
            }
            Err(_) => {
                sobol_csv.push_str(&format!(
                    "{strain},all,undefined (zero variance),undefined (zero variance)\n"
                ));
                println!("{o:<7} all: undefined (zero variance)");
            }
        }
    }
    std::fs::write(common.out.join("sobol.csv"), sobol_csv)?;
    eprintln!("[polytex] analyze: wrote moments.csv and sobol.csv");
    Ok(())
}

/// Calibration file spec: free parameters, budget, stopping tolerance.
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrateFileSpec {
    #[serde(default)]
    free_parameters: Option<Vec<FreeParameter>>,
    #[serde(default = "default_max_evals")]
    max_evals: usize,
    #[serde(default = "default_tolerance")]
    tolerance: f64,
    #[serde(default = "default_cal_grains")]
    n_grains: usize,
}

fn default_max_evals() -> usize {
    300
}
fn default_tolerance() -> f64 {
    1e-3
}
fn default_cal_grains() -> usize {
    40
}

impl Default for CalibrateFileSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn cmd_calibrate(
    common: &Common,
    reference: &Path,
    spec_path: Option<&Path>,
) -> Result<(), PipelineError> {
    let config = resolve_config(common)?;
    let file_spec = match spec_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<CalibrateFileSpec>(&text)
                .map_err(|e| PipelineError::Config(format!("calibration spec parse: {e}")))?
        }
        None => CalibrateFileSpec::default(),
    };
    let reference_curve = StressStrainCurve::load_csv(reference)?;
    let spec = CalibrationSpec {
        free_parameters: file_spec
            .free_parameters
            .unwrap_or_else(default_free_parameters),
        reference_curve,
        max_evals: file_spec.max_evals,
        tolerance: file_spec.tolerance,
    };
    let base = CampaignConfig {
        material: None,
        ..config.clone()
    };
    let sim = CalibrationSimConfig {
        base_params: resolve_material(&base)?,
        n_grains: file_spec.n_grains,
        grain_size: config.grain_size.to_spec(),
        loading: config.loading.to_program(),
        seed: config.seed,
    };
    let result = calibrate(&spec, &sim)?;
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(
        common.out.join("result.json"),
        serde_json::to_string_pretty(&serde_json::json!({
            "best_params": result.best_params,
            "best_rms_mpa": result.best_rms,
            "n_evals": result.n_evals,
            "parameter_names": result.parameter_names,
        }))
        .expect("result"),
    )?;
    std::fs::write(common.out.join("trace.csv"), result.trace_csv())?;
    eprintln!(
        "[polytex] calibrate: best RMS {:.4} MPa after {} evaluations",
        result.best_rms, result.n_evals
    );
    Ok(())
}

fn cmd_mesh_study(
    common: &Common,
    refinements: &str,
    grains: usize,
    edge: f64,
    report_strains: &str,
) -> Result<(), PipelineError> {
    let config = resolve_config(common)?;
    let refinements: Vec<usize> = parse_list(refinements, "refinements")?;
    let report_strains: Vec<f64> = parse_list(report_strains, "report strains")?;
    let material = resolve_material(&config)?;
    let model =
        CrystalModel::new(material).map_err(|e| PipelineError::Config(e.to_string()))?;
    let study = mesh_convergence_study(
        &refinements,
        grains,
        edge,
        &config.grain_size.to_spec(),
        &model,
        &config.loading.to_program(),
        &report_strains,
        config.seed,
    )?;
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(
        common.out.join("mesh_study.json"),
        serde_json::to_string_pretty(&study).expect("study"),
    )?;
    std::fs::write(common.out.join("mesh_study.csv"), study.to_csv())?;
    for (i, row) in study.rows.iter().enumerate() {
        eprintln!(
            "[polytex] mesh-study: {}^3 elements ({:.1} per grain) -> {:?} MPa{}",
            row.n_elem_per_edge,
            row.elements_per_grain,
            row.stresses,
            if i > 0 {
                format!(
                    "  (change {:?})",
                    study.successive_changes[i - 1]
                        .iter()
                        .map(|c| format!("{:.3}%", c * 100.0))
                        .collect::<Vec<_>>()
                )
            } else {
                String::new()
            }
        );
    }
    Ok(())
}

fn cmd_realization_study(
    common: &Common,
    grain_counts: &str,
    realizations: usize,
) -> Result<(), PipelineError> {
    let config = resolve_config(common)?;
    let grain_counts: Vec<usize> = parse_list(grain_counts, "grain counts")?;
    let material = resolve_material(&config)?;
    let model =
        CrystalModel::new(material).map_err(|e| PipelineError::Config(e.to_string()))?;
    let rows = realization_study(
        &config.grain_size.to_spec(),
        &grain_counts,
        realizations,
        &model,
        &config.component_set(),
        &config.loading.to_program(),
        &config.offsets,
        config.seed,
    )?;
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(
        common.out.join("realization_study.json"),
        serde_json::to_string_pretty(&rows).expect("rows"),
    )?;
    let mut csv = String::from("grain_count,offset,mean_mpa,std_mpa\n");
    for row in &rows {
        for (j, &offset) in row.offsets.iter().enumerate() {
            csv.push_str(&format!(
                "{},{offset},{},{}\n",
                row.grain_count, row.mean[j], row.std[j]
            ));
        }
        eprintln!(
            "[polytex] realization-study: {} grains -> std {:?}",
            row.grain_count, row.std
        );
    }
    std::fs::write(common.out.join("realization_study.csv"), csv)?;
    Ok(())
}
