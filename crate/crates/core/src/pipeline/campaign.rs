//! Texture-UQ campaign: sample, simulate, fit, validate, analyze, persist.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json
//! samples/sample_0000/{weights.json, curve.csv}
//! pce_model.json
//! report/{band.csv, sobol.csv, validation.csv, summary.txt, timing.txt}
//! ```
//!
//! Everything except `report/timing.txt` is a deterministic function of the
//! configuration and seed; the manifest carries SHA-256 checksums of the
//! deterministic artifacts.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::{self, CalibrationSimConfig, CalibrationSpec};
use crate::cpcore::{CrystalModel, MaterialParams};
use crate::orientations::{
    generate_grain_orientations, normalize_weights, sample_weight_vectors, TextureWeights,
    COMPONENT_ABBREVS, N_COMPONENTS,
};
use crate::pce::{self, PceModel, SobolPoint, ValidationReport};
use crate::polycrystal::{
    build_population, run_tension_taylor, yield_and_flow_stress, StressStrainCurve,
};
use crate::rng::stream_rng;
use crate::rvefem::{run_tension_fem, voxelize, FemOptions};

use super::config::{CampaignConfig, MaterialSource, SimulatorKind};
use super::PipelineError;

/// Outcome of one sample simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleStatus {
    Ok,
    Failed { error: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub dir: String,
    pub raw_percent: [f64; N_COMPONENTS],
    pub status: SampleStatus,
}

/// Min/mean/max of one offset stress under the surrogate's input
/// distribution, estimated by Monte Carlo on the surrogate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OffsetStat {
    pub offset: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Strain-grid point nearest the mean curve's offset intersection; Sobol
    /// indices at this output represent the offset in the report. None when
    /// the mean curve never crosses the offset line.
    pub strain_index: Option<usize>,
    pub n_draws: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CampaignTiming {
    pub simulation_seconds: f64,
    pub surrogate_fit_seconds: f64,
    pub surrogate_eval_seconds: f64,
    pub surrogate_evals: usize,
}

/// Everything a campaign produces, in memory.
pub struct CampaignResult {
    pub config: CampaignConfig,
    pub material: MaterialParams,
    pub samples: Vec<SampleRecord>,
    pub curves: Vec<Option<StressStrainCurve>>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub model: PceModel,
    pub validation: ValidationReport,
    /// (mean, variance) per strain-grid point.
    pub moments: Vec<(f64, f64)>,
    /// Sobol indices per strain-grid point; None where variance vanishes.
    pub sobol: Vec<Option<SobolPoint>>,
    pub offset_stats: Vec<OffsetStat>,
    pub timing: CampaignTiming,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: CampaignConfig,
    pub material: MaterialParams,
    pub n_samples: usize,
    pub n_failed: usize,
    pub samples: Vec<SampleRecord>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    /// Relative path -> SHA-256 of every deterministic artifact.
    pub checksums: std::collections::BTreeMap<String, String>,
    pub min_r2: f64,
    pub mean_r2: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Weights file schema stored per sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsFile {
    pub raw_percent: std::collections::BTreeMap<String, f64>,
    pub fractions: std::collections::BTreeMap<String, f64>,
    pub random_fraction: f64,
}

impl WeightsFile {
    pub fn new(raw: &[f64; N_COMPONENTS]) -> Self {
        let weights = normalize_weights(raw);
        let mut raw_percent = std::collections::BTreeMap::new();
        let mut fractions = std::collections::BTreeMap::new();
        for (i, &name) in COMPONENT_ABBREVS.iter().enumerate() {
            raw_percent.insert(name.to_string(), raw[i]);
            fractions.insert(name.to_string(), weights.fractions[i]);
        }
        Self {
            raw_percent,
            fractions,
            random_fraction: weights.random_fraction(),
        }
    }

    pub fn raw_array(&self) -> Result<[f64; N_COMPONENTS], PipelineError> {
        let mut raw = [0.0; N_COMPONENTS];
        for (i, &name) in COMPONENT_ABBREVS.iter().enumerate() {
            raw[i] = *self.raw_percent.get(name).ok_or_else(|| {
                PipelineError::Config(format!("weights file missing component {name}"))
            })?;
        }
        Ok(raw)
    }
}

/// Resolves the material: inline constants or calibration against a
/// reference curve.
pub fn resolve_material(config: &CampaignConfig) -> Result<MaterialParams, PipelineError> {
    match &config.material {
        None => Ok(MaterialParams::default()),
        Some(MaterialSource::Params(p)) => {
            p.validate()
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            Ok(p.clone())
        }
        Some(MaterialSource::Calibration(cal)) => {
            let reference = StressStrainCurve::load_csv(&cal.reference_csv)
                .map_err(|e| PipelineError::Config(format!("reference curve: {e}")))?;
            let spec = CalibrationSpec {
                free_parameters: cal
                    .free_parameters
                    .clone()
                    .unwrap_or_else(super::config::default_free_parameters),
                reference_curve: reference,
                max_evals: cal.max_evals,
                tolerance: cal.tolerance,
            };
            let sim = CalibrationSimConfig {
                base_params: MaterialParams::default(),
                n_grains: cal.n_grains,
                grain_size: config.grain_size.to_spec(),
                loading: config.loading.to_program(),
                seed: config.seed,
            };
            let result = calibrate::calibrate(&spec, &sim)?;
            Ok(result.best_params)
        }
    }
}

/// Simulates one sample curve from its raw weight vector.
pub fn simulate_sample(
    config: &CampaignConfig,
    model: &CrystalModel,
    raw: &[f64; N_COMPONENTS],
    sample_index: usize,
) -> Result<StressStrainCurve, PipelineError> {
    simulate_weights(config, model, &normalize_weights(raw), sample_index, None)
}

/// As `simulate_sample`, also writing the microstructure replay artifact
/// (population.json for Taylor, mesh.json + orientations.json for FE).
pub fn simulate_sample_with_artifacts(
    config: &CampaignConfig,
    model: &CrystalModel,
    raw: &[f64; N_COMPONENTS],
    sample_index: usize,
    out_dir: &Path,
) -> Result<StressStrainCurve, PipelineError> {
    simulate_weights(
        config,
        model,
        &normalize_weights(raw),
        sample_index,
        Some(out_dir),
    )
}

fn simulate_weights(
    config: &CampaignConfig,
    model: &CrystalModel,
    weights: &TextureWeights,
    sample_index: usize,
    artifacts: Option<&Path>,
) -> Result<StressStrainCurve, PipelineError> {
    let set = config.component_set();
    let load = config.loading.to_program();
    let spec = config.grain_size.to_spec();
    // Common random numbers across samples: every sample draws its population
    // from the same stream, so grain sizes and per-grain assignment/orientation
    // draws are shared and the response varies only through the weights. The
    // surrogate then resolves the texture effect instead of per-sample
    // realization noise; realization scatter is quantified separately by the
    // realization study.
    let _ = sample_index;
    let mut rng = stream_rng(config.seed, "campaign-population", 0);
    match config.simulator {
        SimulatorKind::Taylor => {
            let pop = build_population(&spec, config.grain_count, &set, weights, &mut rng)?;
            if let Some(dir) = artifacts {
                std::fs::write(dir.join("population.json"), pop.to_json())?;
            }
            Ok(run_tension_taylor(&pop, model, &load)?)
        }
        SimulatorKind::Fem => {
            let mesh = voxelize(
                config.grain_count,
                config.fem.n_elem_per_edge,
                config.fem.edge_length,
                &spec,
                &mut rng,
            )?;
            let orientations =
                generate_grain_orientations(&set, weights, config.grain_count, &mut rng)
                    .map_err(|e| PipelineError::Numerical(e.to_string()))?;
            if let Some(dir) = artifacts {
                std::fs::write(dir.join("mesh.json"), mesh.to_json())?;
                std::fs::write(
                    dir.join("orientations.json"),
                    serde_json::to_string_pretty(&orientations).expect("orientations"),
                )?;
            }
            Ok(run_tension_fem(
                &mesh,
                model,
                &orientations,
                &load,
                FemOptions::default(),
            )?)
        }
    }
}

fn sample_dir_name(index: usize) -> String {
    format!("samples/sample_{index:04}")
}

/// Runs the full campaign and writes every artifact under `out`.
pub fn run_campaign(config: &CampaignConfig, out: &Path) -> Result<CampaignResult, PipelineError> {
    config.validate()?;
    std::fs::create_dir_all(out.join("samples"))?;
    std::fs::create_dir_all(out.join("report"))?;

    let material = resolve_material(config)?;
    let model =
        CrystalModel::new(material.clone()).map_err(|e| PipelineError::Config(e.to_string()))?;

    // Latin-hypercube design over the texture box, raw percent units
    let bounds = config.bounds()?;
    let mut design_rng = stream_rng(config.seed, "campaign-weights", 0);
    let raws = sample_weight_vectors(&bounds, config.n_samples, &mut design_rng);

    // simulate all samples; each writes its own directory
    let t_sim = Instant::now();
    let outcomes: Vec<(SampleRecord, Option<StressStrainCurve>)> = raws
        .par_iter()
        .enumerate()
        .map(|(i, raw)| {
            let dir = sample_dir_name(i);
            let sample_dir = out.join(&dir);
            let write = |curve: &StressStrainCurve| -> Result<(), PipelineError> {
                std::fs::create_dir_all(&sample_dir)?;
                let weights_json =
                    serde_json::to_string_pretty(&WeightsFile::new(raw)).expect("weights");
                std::fs::write(sample_dir.join("weights.json"), weights_json)?;
                curve.save_csv(&sample_dir.join("curve.csv"))?;
                Ok(())
            };
            match simulate_sample(config, &model, raw, i) {
                Ok(curve) => match write(&curve) {
                    Ok(()) => (
                        SampleRecord {
                            index: i,
                            dir,
                            raw_percent: *raw,
                            status: SampleStatus::Ok,
                        },
                        Some(curve),
                    ),
                    Err(e) => (
                        SampleRecord {
                            index: i,
                            dir,
                            raw_percent: *raw,
                            status: SampleStatus::Failed {
                                error: e.to_string(),
                            },
                        },
                        None,
                    ),
                },
                Err(e) => (
                    SampleRecord {
                        index: i,
                        dir,
                        raw_percent: *raw,
                        status: SampleStatus::Failed {
                            error: e.to_string(),
                        },
                    },
                    None,
                ),
            }
        })
        .collect();
    let simulation_seconds = t_sim.elapsed().as_secs_f64();

    let samples: Vec<SampleRecord> = outcomes.iter().map(|(r, _)| r.clone()).collect();
    let curves: Vec<Option<StressStrainCurve>> =
        outcomes.into_iter().map(|(_, c)| c).collect();
    let n_failed = samples
        .iter()
        .filter(|s| matches!(s.status, SampleStatus::Failed { .. }))
        .count();
    if n_failed * 10 > config.n_samples {
        return Err(PipelineError::TooManyFailures {
            failed: n_failed,
            total: config.n_samples,
        });
    }

    let analysis = fit_and_analyze(config, &samples, &curves)?;
    let timing = CampaignTiming {
        simulation_seconds,
        surrogate_fit_seconds: analysis.fit_seconds,
        surrogate_eval_seconds: analysis.eval_seconds,
        surrogate_evals: analysis.n_draws,
    };

    let result = CampaignResult {
        config: config.clone(),
        material,
        samples,
        curves,
        train_indices: analysis.train_indices,
        validation_indices: analysis.validation_indices,
        model: analysis.model,
        validation: analysis.validation,
        moments: analysis.moments,
        sobol: analysis.sobol,
        offset_stats: analysis.offset_stats,
        timing,
    };

    result.model.save(&out.join("pce_model.json"))?;
    super::report::write_report(&result, &out.join("report"))?;
    write_manifest(&result, out)?;
    Ok(result)
}

pub(super) struct Analysis {
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub model: PceModel,
    pub validation: ValidationReport,
    pub moments: Vec<(f64, f64)>,
    pub sobol: Vec<Option<SobolPoint>>,
    pub offset_stats: Vec<OffsetStat>,
    pub fit_seconds: f64,
    pub eval_seconds: f64,
    pub n_draws: usize,
}

/// Train/validation split, regression, validation, moments, Sobol, and the
/// Monte Carlo offset-stress statistics.
pub(super) fn fit_and_analyze(
    config: &CampaignConfig,
    samples: &[SampleRecord],
    curves: &[Option<StressStrainCurve>],
) -> Result<Analysis, PipelineError> {
    let bounds = config.bounds()?;
    let input_spec = pce::InputSpec::new(bounds.ranges.to_vec())
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let strain_grid = config.loading.to_program().output_grid;

    // seeded shuffle of the successful samples, split by train fraction
    let mut ok_indices: Vec<usize> = samples
        .iter()
        .filter(|s| matches!(s.status, SampleStatus::Ok))
        .map(|s| s.index)
        .collect();
    let mut split_rng = stream_rng(config.seed, "campaign-split", 0);
    for i in (1..ok_indices.len()).rev() {
        let j = split_rng.gen_range(0..=i);
        ok_indices.swap(i, j);
    }
    let n_train = ((ok_indices.len() as f64) * config.train_fraction).round() as usize;
    let n_train = n_train.clamp(1, ok_indices.len().saturating_sub(1).max(1));
    let mut train_indices: Vec<usize> = ok_indices[..n_train].to_vec();
    let mut validation_indices: Vec<usize> = ok_indices[n_train..].to_vec();
    train_indices.sort_unstable();
    validation_indices.sort_unstable();

    let dataset = |indices: &[usize]| -> Vec<(Vec<f64>, Vec<f64>)> {
        indices
            .iter()
            .map(|&i| {
                let curve = curves[i].as_ref().expect("successful sample has a curve");
                (samples[i].raw_percent.to_vec(), curve.stress.clone())
            })
            .collect()
    };
    let train = dataset(&train_indices);
    let held_out = dataset(&validation_indices);

    let t_fit = Instant::now();
    let mut model = pce::fit(&train, &input_spec, config.pce_degree, &strain_grid)?;
    model.input_names = COMPONENT_ABBREVS.iter().map(|s| s.to_string()).collect();
    let fit_seconds = t_fit.elapsed().as_secs_f64();

    // degenerate splits (fewer than 2 held-out samples) validate in-sample
    let validation = if held_out.len() >= 2 {
        pce::validate(&model, &held_out)?
    } else {
        pce::validate(&model, &train)?
    };

    let moments = pce::moments(&model);
    let sobol: Vec<Option<SobolPoint>> = (0..model.n_outputs())
        .map(|o| pce::sobol_indices(&model, o).ok())
        .collect();

    let (offset_stats, eval_seconds, n_draws) =
        offset_statistics(config, &model, &moments)?;

    Ok(Analysis {
        train_indices,
        validation_indices,
        model,
        validation,
        moments,
        sobol,
        offset_stats,
        fit_seconds,
        eval_seconds,
        n_draws,
    })
}

/// Monte Carlo min/mean/max of the offset stresses over the surrogate's
/// uniform input box (1e5 draws).
fn offset_statistics(
    config: &CampaignConfig,
    model: &PceModel,
    moments: &[(f64, f64)],
) -> Result<(Vec<OffsetStat>, f64, usize), PipelineError> {
    let n_draws = 100_000;
    let offsets = &config.offsets;
    let strain_grid = &model.strain_grid;

    // locate each offset on the surrogate's mean curve for Sobol reporting;
    // offsets the mean curve never crosses have no representative point
    let mean_curve = StressStrainCurve {
        strain: strain_grid.clone(),
        stress: moments.iter().map(|&(m, _)| m).collect(),
    };
    let strain_index_for = |offset: f64| -> Option<usize> {
        let stress_at = yield_and_flow_stress(&mean_curve, &[offset]).ok()?[0];
        // strain of the intersection point: eps = offset + stress / E
        let e_slope = if mean_curve.strain.len() > 2 && mean_curve.strain[2] > 0.0 {
            mean_curve.stress[2] / mean_curve.strain[2]
        } else {
            return None;
        };
        let eps = offset + stress_at / e_slope;
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &s) in strain_grid.iter().enumerate() {
            let d = (s - eps).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        Some(best)
    };

    let t_eval = Instant::now();
    let mut rng = stream_rng(config.seed, "campaign-offset-mc", 0);
    let bounds = &model.input_spec.bounds;
    let mut acc: Vec<(f64, f64, f64, usize)> = offsets
        .iter()
        .map(|_| (0.0, f64::INFINITY, f64::NEG_INFINITY, 0usize))
        .collect();
    let mut raw = vec![0.0; bounds.len()];
    for _ in 0..n_draws {
        for (v, &(lo, hi)) in raw.iter_mut().zip(bounds) {
            *v = rng.gen_range(lo..=hi);
        }
        let stresses = pce::predict(model, &raw)?;
        let curve = StressStrainCurve {
            strain: strain_grid.clone(),
            stress: stresses,
        };
        // offsets are independent: one unreachable line must not drop the rest
        for (slot, &offset) in acc.iter_mut().zip(offsets) {
            if let Ok(values) = yield_and_flow_stress(&curve, &[offset]) {
                let v = values[0];
                slot.0 += v;
                slot.1 = slot.1.min(v);
                slot.2 = slot.2.max(v);
                slot.3 += 1;
            }
        }
    }
    let eval_seconds = t_eval.elapsed().as_secs_f64();

    let stats = offsets
        .iter()
        .zip(&acc)
        .map(|(&offset, &(sum, min, max, count))| OffsetStat {
            offset,
            mean: if count > 0 { sum / count as f64 } else { f64::NAN },
            min: if count > 0 { min } else { f64::NAN },
            max: if count > 0 { max } else { f64::NAN },
            strain_index: strain_index_for(offset),
            n_draws: count,
        })
        .collect();
    Ok((stats, eval_seconds, n_draws))
}

fn write_manifest(result: &CampaignResult, out: &Path) -> Result<(), PipelineError> {
    let mut checksums = std::collections::BTreeMap::new();
    let mut add = |rel: &str| -> Result<(), PipelineError> {
        let bytes = std::fs::read(out.join(rel))?;
        checksums.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    };
    for sample in &result.samples {
        if matches!(sample.status, SampleStatus::Ok) {
            add(&format!("{}/weights.json", sample.dir))?;
            add(&format!("{}/curve.csv", sample.dir))?;
        }
    }
    add("pce_model.json")?;
    add("report/band.csv")?;
    add("report/sobol.csv")?;
    add("report/validation.csv")?;
    add("report/summary.txt")?;
    // report/timing.txt is wall-clock data, deliberately not checksummed

    let manifest = Manifest {
        config: result.config.clone(),
        material: result.material.clone(),
        n_samples: result.samples.len(),
        n_failed: result
            .samples
            .iter()
            .filter(|s| matches!(s.status, SampleStatus::Failed { .. }))
            .count(),
        samples: result.samples.clone(),
        train_indices: result.train_indices.clone(),
        validation_indices: result.validation_indices.clone(),
        checksums,
        min_r2: result.validation.min_r2,
        mean_r2: result.validation.mean_r2,
    };
    std::fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest"),
    )?;
    Ok(())
}

/// Re-fits the surrogate from an existing campaign directory using the same
/// split seed; given the same config this reproduces the campaign's model.
pub fn fit_from_directory(
    config: &CampaignConfig,
    campaign_dir: &Path,
) -> Result<PceModel, PipelineError> {
    let manifest_text = std::fs::read_to_string(campaign_dir.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| PipelineError::Config(format!("manifest parse: {e}")))?;

    let mut samples = Vec::new();
    let mut curves = Vec::new();
    for record in &manifest.samples {
        let curve = match record.status {
            SampleStatus::Ok => {
                let path = campaign_dir.join(&record.dir).join("curve.csv");
                Some(StressStrainCurve::load_csv(&path)?)
            }
            SampleStatus::Failed { .. } => None,
        };
        samples.push(record.clone());
        curves.push(curve);
    }
    let analysis = fit_and_analyze(config, &samples, &curves)?;
    Ok(analysis.model)
}

/// Reads all deterministic artifacts of a campaign directory into one digest
/// (the manifest's own bytes included).
pub fn directory_digest(out: &Path) -> Result<String, PipelineError> {
    let manifest_text = std::fs::read_to_string(out.join("manifest.json"))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)
        .map_err(|e| PipelineError::Config(format!("manifest parse: {e}")))?;
    let mut hasher = Sha256::new();
    hasher.update(manifest_text.as_bytes());
    for (rel, expected) in &manifest.checksums {
        let bytes = std::fs::read(out.join(rel))?;
        let actual = sha256_hex(&bytes);
        if &actual != expected {
            return Err(PipelineError::Numerical(format!(
                "checksum mismatch for {rel}: manifest {expected}, file {actual}"
            )));
        }
        hasher.update(actual.as_bytes());
    }
    let digest = hasher.finalize();
    let mut outhex = String::with_capacity(64);
    for b in digest {
        outhex.push_str(&format!("{b:02x}"));
    }
    Ok(outhex)
}
