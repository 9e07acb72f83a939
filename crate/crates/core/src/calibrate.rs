//! Constitutive-parameter calibration against a reference stress-strain curve.
//!
//! The objective is the root-mean-square stress difference between a fixed
//! Taylor calibration simulation and the reference curve, evaluated on the
//! reference strain grid. A bounded Nelder-Mead simplex minimizes it over a
//! named subset of the material parameters; box coordinates are log-scaled
//! when a bound allows it, since the plastic constants span decades.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpcore::{CrystalModel, MaterialParams};
use crate::orientations::{TextureComponentSet, TextureWeights, N_COMPONENTS};
use crate::polycrystal::{
    build_population, run_tension_taylor, GrainPopulation, GrainSizeSpec, LoadingProgram,
    PolyError, StressStrainCurve,
};

/// Objective value returned for failed simulations.
pub const PENALTY_RMS: f64 = 1e6;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("unknown material parameter: {0}")]
    UnknownParameter(String),
    #[error("invalid calibration spec: {0}")]
    InvalidSpec(String),
    #[error("every vertex of the initial simplex failed to simulate; widen the parameter bounds")]
    AllPenalty,
    #[error(transparent)]
    Poly(#[from] PolyError),
}

/// The five-parameter default free set: the plastic constants a monotonic
/// tension test can constrain.
pub const DEFAULT_FREE_PARAMETERS: [&str; 5] =
    ["rho_ssd_init", "C_hard", "D_soft", "E_kin", "F_kin"];

/// One free parameter with its search box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeParameter {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// What to calibrate and when to stop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub free_parameters: Vec<FreeParameter>,
    pub reference_curve: StressStrainCurve,
    pub max_evals: usize,
    /// Objective spread (MPa) below which the simplex is converged.
    pub tolerance: f64,
}

impl CalibrationSpec {
    pub fn validate(&self) -> Result<(), CalibrateError> {
        if self.free_parameters.is_empty() {
            return Err(CalibrateError::InvalidSpec("free set is empty".into()));
        }
        for fp in &self.free_parameters {
            if !(fp.lo < fp.hi) {
                return Err(CalibrateError::InvalidSpec(format!(
                    "{}: lo {} must be < hi {}",
                    fp.name, fp.lo, fp.hi
                )));
            }
            get_param(&MaterialParams::default(), &fp.name)
                .ok_or_else(|| CalibrateError::UnknownParameter(fp.name.clone()))?;
        }
        self.reference_curve.validate()?;
        Ok(())
    }
}

/// Fixed simulation setup the objective runs on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSimConfig {
    pub base_params: MaterialParams,
    pub n_grains: usize,
    pub grain_size: GrainSizeSpec,
    pub loading: LoadingProgram,
    /// Seed of the fixed calibration population.
    pub seed: u64,
}

impl Default for CalibrationSimConfig {
    fn default() -> Self {
        Self {
            base_params: MaterialParams::default(),
            n_grains: 40,
            grain_size: GrainSizeSpec::default(),
            loading: LoadingProgram::default(),
            seed: 7_191,
        }
    }
}

pub fn get_param(p: &MaterialParams, name: &str) -> Option<f64> {
    Some(match name {
        "C11" => p.c11,
        "C12" => p.c12,
        "C44" => p.c44,
        "gamma_dot_0" => p.gamma_dot_0,
        "n_exp" => p.n_exp,
        "A_geo" => p.a_geo,
        "G_shear" => p.g_shear,
        "b_burgers" => p.b_burgers,
        "B_size" => p.b_size,
        "C_hard" => p.c_hard,
        "D_soft" => p.d_soft,
        "E_kin" => p.e_kin,
        "F_kin" => p.f_kin,
        "rho_ssd_init" => p.rho_ssd_init,
        _ => return None,
    })
}

pub fn set_param(p: &mut MaterialParams, name: &str, value: f64) -> Result<(), CalibrateError> {
    let slot = match name {
        "C11" => &mut p.c11,
        "C12" => &mut p.c12,
        "C44" => &mut p.c44,
        "gamma_dot_0" => &mut p.gamma_dot_0,
        "n_exp" => &mut p.n_exp,
        "A_geo" => &mut p.a_geo,
        "G_shear" => &mut p.g_shear,
        "b_burgers" => &mut p.b_burgers,
        "B_size" => &mut p.b_size,
        "C_hard" => &mut p.c_hard,
        "D_soft" => &mut p.d_soft,
        "E_kin" => &mut p.e_kin,
        "F_kin" => &mut p.f_kin,
        "rho_ssd_init" => &mut p.rho_ssd_init,
        other => return Err(CalibrateError::UnknownParameter(other.to_string())),
    };
    *slot = value;
    Ok(())
}

/// Reusable objective: the calibration population is built once from the
/// fixed seed, so every evaluation sees the same aggregate.
pub struct Objective<'a> {
    population: GrainPopulation,
    reference: &'a StressStrainCurve,
    sim: &'a CalibrationSimConfig,
}

/// The fixed random-texture aggregate every objective evaluation runs on.
pub fn calibration_population(sim: &CalibrationSimConfig) -> Result<GrainPopulation, CalibrateError> {
    let set = TextureComponentSet::default();
    let weights = TextureWeights {
        fractions: [0.0; N_COMPONENTS],
    };
    let mut rng = crate::rng::stream_rng(sim.seed, "calibration-population", 0);
    Ok(build_population(
        &sim.grain_size,
        sim.n_grains,
        &set,
        &weights,
        &mut rng,
    )?)
}

impl<'a> Objective<'a> {
    pub fn new(
        reference: &'a StressStrainCurve,
        sim: &'a CalibrationSimConfig,
    ) -> Result<Self, CalibrateError> {
        Ok(Self {
            population: calibration_population(sim)?,
            reference,
            sim,
        })
    }

    /// RMS stress error in MPa; `true` flags a penalized (failed) simulation.
    pub fn evaluate(&self, params: &MaterialParams) -> (f64, bool) {
        let model = match CrystalModel::new(params.clone()) {
            Ok(m) => m,
            Err(_) => return (PENALTY_RMS, true),
        };
        let curve = match run_tension_taylor(&self.population, &model, &self.sim.loading) {
            Ok(c) => c,
            Err(_) => return (PENALTY_RMS, true),
        };
        let mut sq_sum = 0.0;
        for (s, y_ref) in self.reference.strain.iter().zip(&self.reference.stress) {
            let y_sim = curve.interpolate(*s);
            sq_sum += (y_sim - y_ref).powi(2);
        }
        ((sq_sum / self.reference.strain.len() as f64).sqrt(), false)
    }
}

/// One-shot RMS objective evaluation (MPa).
pub fn objective(
    params: &MaterialParams,
    reference: &StressStrainCurve,
    sim: &CalibrationSimConfig,
) -> Result<f64, CalibrateError> {
    Ok(Objective::new(reference, sim)?.evaluate(params).0)
}

/// One recorded objective evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub values: Vec<f64>,
    pub rms: f64,
    pub penalized: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub best_params: MaterialParams,
    pub best_rms: f64,
    pub n_evals: usize,
    pub trace: Vec<TraceEntry>,
    /// Names of the calibrated parameters, in trace column order.
    pub parameter_names: Vec<String>,
}

impl CalibrationResult {
    /// Convergence trace as CSV: eval index, parameter columns, rms.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("eval");
        for name in &self.parameter_names {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",rms_mpa\n");
        for (i, entry) in self.trace.iter().enumerate() {
            out.push_str(&format!("{i}"));
            for v in &entry.values {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", entry.rms));
        }
        out
    }
}

/// Box scaling: log when the lower bound is positive, linear otherwise.
#[derive(Clone, Copy)]
enum Scale {
    Log { lo: f64, hi: f64 },
    Linear { lo: f64, hi: f64 },
}

impl Scale {
    fn for_bounds(lo: f64, hi: f64) -> Self {
        if lo > 0.0 {
            Scale::Log { lo, hi }
        } else {
            Scale::Linear { lo, hi }
        }
    }

    fn decode(self, z: f64) -> f64 {
        let z = z.clamp(0.0, 1.0);
        match self {
            Scale::Log { lo, hi } => lo * (hi / lo).powf(z),
            Scale::Linear { lo, hi } => lo + z * (hi - lo),
        }
    }

    fn encode(self, v: f64) -> f64 {
        match self {
            Scale::Log { lo, hi } => (v.max(lo).min(hi) / lo).ln() / (hi / lo).ln(),
            Scale::Linear { lo, hi } => ((v - lo) / (hi - lo)).clamp(0.0, 1.0),
        }
    }
}

/// Nelder-Mead calibration. Returns the best parameters ever evaluated, not
/// the final simplex centroid.
pub fn calibrate(
    spec: &CalibrationSpec,
    sim: &CalibrationSimConfig,
) -> Result<CalibrationResult, CalibrateError> {
    spec.validate()?;
    let objective = Objective::new(&spec.reference_curve, sim)?;
    let k = spec.free_parameters.len();
    let scales: Vec<Scale> = spec
        .free_parameters
        .iter()
        .map(|fp| Scale::for_bounds(fp.lo, fp.hi))
        .collect();

    let decode = |z: &[f64]| -> (MaterialParams, Vec<f64>) {
        let mut params = sim.base_params.clone();
        let mut values = Vec::with_capacity(k);
        for (i, fp) in spec.free_parameters.iter().enumerate() {
            let v = scales[i].decode(z[i]);
            set_param(&mut params, &fp.name, v).expect("validated name");
            values.push(v);
        }
        (params, values)
    };

    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut best: Option<(f64, MaterialParams)> = None;
    let mut n_evals = 0usize;

    let eval = |z: &[f64],
                    trace: &mut Vec<TraceEntry>,
                    best: &mut Option<(f64, MaterialParams)>,
                    n_evals: &mut usize|
     -> f64 {
        let (params, values) = decode(z);
        let (rms, penalized) = objective.evaluate(&params);
        trace.push(TraceEntry {
            values,
            rms,
            penalized,
        });
        *n_evals += 1;
        if best.as_ref().map_or(true, |(b, _)| rms < *b) {
            *best = Some((rms, params));
        }
        rms
    };

    // initial simplex around the base parameter point
    let z0: Vec<f64> = spec
        .free_parameters
        .iter()
        .enumerate()
        .map(|(i, fp)| scales[i].encode(get_param(&sim.base_params, &fp.name).expect("validated")))
        .collect();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    {
        let f0 = eval(&z0, &mut trace, &mut best, &mut n_evals);
        simplex.push((z0.clone(), f0));
        for i in 0..k {
            if n_evals >= spec.max_evals {
                break;
            }
            let mut z = z0.clone();
            z[i] = if z[i] + 0.15 <= 1.0 { z[i] + 0.15 } else { z[i] - 0.15 };
            let f = eval(&z, &mut trace, &mut best, &mut n_evals);
            simplex.push((z, f));
        }
    }
    if simplex.iter().all(|(_, f)| *f >= PENALTY_RMS) {
        return Err(CalibrateError::AllPenalty);
    }

    // standard coefficients: reflection 1, expansion 2, contraction 0.5, shrink 0.5
    while n_evals < spec.max_evals && simplex.len() == k + 1 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[k].1;
        if f_worst - f_best < spec.tolerance {
            break;
        }
        let diameter = simplex[1..]
            .iter()
            .map(|(z, _)| {
                z.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if diameter < 1e-7 {
            break;
        }

        let centroid: Vec<f64> = (0..k)
            .map(|i| simplex[..k].iter().map(|(z, _)| z[i]).sum::<f64>() / k as f64)
            .collect();
        let worst = simplex[k].clone();
        let second_worst = simplex[k - 1].1;

        let blend = |t: f64| -> Vec<f64> {
            (0..k)
                .map(|i| centroid[i] + t * (centroid[i] - worst.0[i]))
                .collect()
        };

        let z_reflect = blend(1.0);
        let f_reflect = eval(&z_reflect, &mut trace, &mut best, &mut n_evals);
        if f_reflect < f_best {
            if n_evals >= spec.max_evals {
                simplex[k] = (z_reflect, f_reflect);
                break;
            }
            let z_expand = blend(2.0);
            let f_expand = eval(&z_expand, &mut trace, &mut best, &mut n_evals);
            simplex[k] = if f_expand < f_reflect {
                (z_expand, f_expand)
            } else {
                (z_reflect, f_reflect)
            };
        } else if f_reflect < second_worst {
            simplex[k] = (z_reflect, f_reflect);
        } else {
            let (z_contract, towards_reflect) = if f_reflect < worst.1 {
                (blend(0.5), true)
            } else {
                (blend(-0.5), false)
            };
            if n_evals >= spec.max_evals {
                break;
            }
            let f_contract = eval(&z_contract, &mut trace, &mut best, &mut n_evals);
            let contract_target = if towards_reflect { f_reflect } else { worst.1 };
            if f_contract < contract_target {
                simplex[k] = (z_contract, f_contract);
            } else {
                // shrink towards the best vertex
                let anchor = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    if n_evals >= spec.max_evals {
                        break;
                    }
                    let z: Vec<f64> = v
                        .0
                        .iter()
                        .zip(&anchor)
                        .map(|(zi, ai)| ai + 0.5 * (zi - ai))
                        .collect();
                    let f = eval(&z, &mut trace, &mut best, &mut n_evals);
                    *v = (z, f);
                }
            }
        }
    }

    let (best_rms, best_params) = best.expect("at least one evaluation");
    Ok(CalibrationResult {
        best_params,
        best_rms,
        n_evals,
        trace,
        parameter_names: spec
            .free_parameters
            .iter()
            .map(|fp| fp.name.clone())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quick_sim() -> CalibrationSimConfig {
        CalibrationSimConfig {
            base_params: MaterialParams::default(),
            n_grains: 6,
            grain_size: GrainSizeSpec::default(),
            loading: LoadingProgram::to_strain(0.02, 1e-3, 20, 21),
            seed: 42,
        }
    }

    fn reference_for(params: &MaterialParams, sim: &CalibrationSimConfig) -> StressStrainCurve {
        let population = calibration_population(sim).unwrap();
        let model = CrystalModel::new(params.clone()).unwrap();
        run_tension_taylor(&population, &model, &sim.loading).unwrap()
    }

    #[test]
    fn self_consistent_reference_scores_zero() {
        let sim = quick_sim();
        let reference = reference_for(&sim.base_params, &sim);
        let rms = objective(&sim.base_params, &reference, &sim).unwrap();
        assert!(rms < 1e-6, "rms = {rms}");
    }

    #[test]
    fn uniform_offset_scores_exactly_the_offset() {
        let sim = quick_sim();
        let mut reference = reference_for(&sim.base_params, &sim);
        for y in &mut reference.stress {
            *y += 10.0;
        }
        let rms = objective(&sim.base_params, &reference, &sim).unwrap();
        assert_relative_eq!(rms, 10.0, max_relative = 1e-9);
    }

    #[test]
    fn objective_grows_monotonically_along_c_hard_perturbation() {
        let sim = quick_sim();
        let reference = reference_for(&sim.base_params, &sim);
        let mut last = -1.0;
        for t in [0.0, 0.125, 0.25, 0.5, 1.0] {
            let mut p = sim.base_params.clone();
            p.c_hard *= 1.0 + 0.5 * t;
            let rms = objective(&p, &reference, &sim).unwrap();
            assert!(rms > last, "rms {rms} not increasing at t = {t}");
            last = rms;
        }
    }

    #[test]
    fn invalid_parameters_are_penalized() {
        let sim = quick_sim();
        let reference = reference_for(&sim.base_params, &sim);
        let obj = Objective::new(&reference, &sim).unwrap();
        let mut p = sim.base_params.clone();
        p.c_hard = -1.0;
        let (rms, penalized) = obj.evaluate(&p);
        assert_eq!(rms, PENALTY_RMS);
        assert!(penalized);
    }

    #[test]
    fn synthetic_ground_truth_is_recovered_at_objective_level() {
        let sim = quick_sim();
        // ground truth differs from the starting point in all five parameters
        let mut truth = sim.base_params.clone();
        truth.rho_ssd_init = 18.0;
        truth.c_hard = 0.45;
        truth.d_soft = 35.0;
        truth.e_kin = 4_500.0;
        truth.f_kin = 140.0;
        let reference = reference_for(&truth, &sim);

        let spec = CalibrationSpec {
            free_parameters: [
                ("rho_ssd_init", 2.0, 100.0),
                ("C_hard", 0.05, 2.0),
                ("D_soft", 5.0, 300.0),
                ("E_kin", 500.0, 20_000.0),
                ("F_kin", 20.0, 600.0),
            ]
            .into_iter()
            .map(|(name, lo, hi)| FreeParameter {
                name: name.into(),
                lo,
                hi,
            })
            .collect(),
            reference_curve: reference.clone(),
            max_evals: 400,
            tolerance: 1e-4,
        };
        let result = calibrate(&spec, &sim).unwrap();
        assert!(
            result.best_rms < 1.0,
            "recovered objective {} MPa",
            result.best_rms
        );
        // replay: the stored parameters reproduce the reported objective
        let replay = objective(&result.best_params, &reference, &sim).unwrap();
        assert_relative_eq!(replay, result.best_rms, epsilon = 1e-9);
        // running minimum of the trace is non-increasing and ends at best
        let mut running = f64::INFINITY;
        for entry in &result.trace {
            running = running.min(entry.rms);
        }
        assert_relative_eq!(running, result.best_rms, epsilon = 1e-12);
        assert!(result.best_rms <= result.trace[0].rms);
    }

    #[test]
    fn max_evals_one_returns_initial_point() {
        let sim = quick_sim();
        let reference = reference_for(&sim.base_params, &sim);
        let spec = CalibrationSpec {
            free_parameters: vec![FreeParameter {
                name: "C_hard".into(),
                lo: 0.05,
                hi: 2.0,
            }],
            reference_curve: reference,
            max_evals: 1,
            tolerance: 1e-4,
        };
        let result = calibrate(&spec, &sim).unwrap();
        assert_eq!(result.n_evals, 1);
        assert_relative_eq!(
            result.best_params.c_hard,
            sim.base_params.c_hard,
            max_relative = 1e-12
        );
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        let sim = quick_sim();
        let reference = reference_for(&sim.base_params, &sim);
        let spec = CalibrationSpec {
            free_parameters: vec![FreeParameter {
                name: "Q_mystery".into(),
                lo: 0.0,
                hi: 1.0,
            }],
            reference_curve: reference,
            max_evals: 10,
            tolerance: 1e-4,
        };
        assert!(matches!(
            calibrate(&spec, &sim),
            Err(CalibrateError::UnknownParameter(_))
        ));
    }

    #[test]
    fn trace_csv_has_parameter_columns() {
        let sim = quick_sim();
        let reference = reference_for(&sim.base_params, &sim);
        let spec = CalibrationSpec {
            free_parameters: vec![FreeParameter {
                name: "C_hard".into(),
                lo: 0.05,
                hi: 2.0,
            }],
            reference_curve: reference,
            max_evals: 8,
            tolerance: 1e-6,
        };
        let result = calibrate(&spec, &sim).unwrap();
        let csv = result.trace_csv();
        assert!(csv.starts_with("eval,C_hard,rms_mpa\n"));
        assert_eq!(csv.lines().count(), result.trace.len() + 1);
    }
}
