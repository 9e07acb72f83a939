//! Grain populations and Taylor-homogenized uniaxial tension.
//!
//! Every grain sees the same macroscopic deformation gradient (iso-deformation
//! upper bound). The axial component F11 follows the loading program; the five
//! remaining components of a symmetric F are solved each step so the
//! volume-averaged lateral Cauchy stresses vanish, which realizes a uniaxial
//! stress state. Engineering stress is the averaged first Piola-Kirchhoff
//! axial component.

use nalgebra::{Matrix3, Matrix5, Vector5};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpcore::{resolved_shear_stress, CpError, CrystalModel, MaterialPointState};
use crate::orientations::{
    generate_grain_orientations, EulerAngles, OrientationError, TextureComponentSet,
    TextureWeights,
};

#[derive(Debug, Error)]
pub enum PolyError {
    #[error("grain {grain}: {source}")]
    PointFailure { grain: usize, source: CpError },
    #[error("lateral stress solve did not converge at engineering strain {strain:.5}")]
    LateralNonConvergence { strain: f64 },
    #[error("infeasible grain size spec: mean {mean}, std {std}, cutoffs [{min_cut}, {max_cut}]")]
    InfeasibleSizeSpec {
        mean: f64,
        std: f64,
        min_cut: f64,
        max_cut: f64,
    },
    #[error("stress-strain curve is degenerate: {0}")]
    DegenerateCurve(String),
    #[error("no offset-line intersection for offset {offset}")]
    NoIntersection { offset: f64 },
    #[error(transparent)]
    Orientation(#[from] OrientationError),
    #[error("curve file parse: {0}")]
    CurveParse(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Normal grain-diameter distribution with hard cutoffs, micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrainSizeSpec {
    pub mean: f64,
    pub std: f64,
    pub min_cut: f64,
    pub max_cut: f64,
}

impl Default for GrainSizeSpec {
    /// 20 +/- 8 um, truncated at mean +/- 2 std (floored at 2 um).
    fn default() -> Self {
        Self {
            mean: 20.0,
            std: 8.0,
            min_cut: 4.0,
            max_cut: 36.0,
        }
    }
}

impl GrainSizeSpec {
    pub fn validate(&self) -> Result<(), PolyError> {
        let ok = self.min_cut > 0.0
            && self.min_cut <= self.mean
            && self.mean <= self.max_cut
            && self.std > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PolyError::InfeasibleSizeSpec {
                mean: self.mean,
                std: self.std,
                min_cut: self.min_cut,
                max_cut: self.max_cut,
            })
        }
    }

    /// One truncated-normal diameter draw. Panics if the acceptance window is
    /// so narrow that 100k draws all miss (validate() screens the common
    /// misconfigurations first).
    pub fn sample_diameter<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(self.mean, self.std).expect("std > 0");
        for _ in 0..100_000 {
            let d = normal.sample(rng);
            if d >= self.min_cut && d <= self.max_cut {
                return d;
            }
        }
        panic!(
            "truncated normal rejection failed: window [{}, {}] around {} +/- {}",
            self.min_cut, self.max_cut, self.mean, self.std
        );
    }
}

/// One grain of the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grain {
    pub orientation: EulerAngles,
    pub volume_fraction: f64,
    /// Equivalent sphere diameter, um; also the mean slip distance fed to the
    /// constitutive model.
    pub diameter: f64,
}

/// A sampled set of grains with volume fractions summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrainPopulation {
    pub grains: Vec<Grain>,
}

impl GrainPopulation {
    pub fn n_grains(&self) -> usize {
        self.grains.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("population serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Draws diameters (truncated normal), assigns volume fractions proportional
/// to diameter cubed, and samples orientations from the weight mixture.
pub fn build_population<R: Rng + ?Sized>(
    spec: &GrainSizeSpec,
    n_grains: usize,
    set: &TextureComponentSet,
    weights: &TextureWeights,
    rng: &mut R,
) -> Result<GrainPopulation, PolyError> {
    assert!(n_grains >= 1);
    spec.validate()?;
    let diameters: Vec<f64> = (0..n_grains).map(|_| spec.sample_diameter(rng)).collect();
    let orientations = generate_grain_orientations(set, weights, n_grains, rng)?;
    let total: f64 = diameters.iter().map(|d| d.powi(3)).sum();
    let grains = diameters
        .into_iter()
        .zip(orientations)
        .map(|(diameter, orientation)| Grain {
            orientation,
            volume_fraction: diameter.powi(3) / total,
            diameter,
        })
        .collect();
    Ok(GrainPopulation { grains })
}

/// Strain program for a monotonic uniaxial test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadingProgram {
    /// Final engineering strain.
    pub target_strain: f64,
    /// Engineering strain rate, 1/s.
    pub strain_rate: f64,
    /// Number of uniform macroscopic steps.
    pub n_steps: usize,
    /// Strain values the reported curve is interpolated onto.
    pub output_grid: Vec<f64>,
}

impl Default for LoadingProgram {
    fn default() -> Self {
        Self::to_strain(0.04, 1e-3, 80, 101)
    }
}

impl LoadingProgram {
    /// Uniform step program with a uniform output grid from zero to target.
    pub fn to_strain(target_strain: f64, strain_rate: f64, n_steps: usize, n_out: usize) -> Self {
        let output_grid = (0..n_out)
            .map(|i| target_strain * i as f64 / (n_out - 1) as f64)
            .collect();
        Self {
            target_strain,
            strain_rate,
            n_steps,
            output_grid,
        }
    }

    pub fn dt(&self) -> f64 {
        self.target_strain / self.strain_rate / self.n_steps as f64
    }
}

/// Engineering stress-strain samples on an ascending strain grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressStrainCurve {
    pub strain: Vec<f64>,
    pub stress: Vec<f64>,
}

impl StressStrainCurve {
    pub fn validate(&self) -> Result<(), PolyError> {
        if self.strain.len() != self.stress.len() || self.strain.is_empty() {
            return Err(PolyError::DegenerateCurve(
                "strain/stress length mismatch or empty".into(),
            ));
        }
        if self.strain[0] != 0.0 || self.stress[0] != 0.0 {
            return Err(PolyError::DegenerateCurve("curve must start at (0, 0)".into()));
        }
        if !self.strain.windows(2).all(|w| w[1] > w[0]) {
            return Err(PolyError::DegenerateCurve("strain not strictly increasing".into()));
        }
        Ok(())
    }

    /// Linear interpolation; clamps to the end values outside the range.
    pub fn interpolate(&self, at: f64) -> f64 {
        let n = self.strain.len();
        if at <= self.strain[0] {
            return self.stress[0];
        }
        if at >= self.strain[n - 1] {
            return self.stress[n - 1];
        }
        let idx = self.strain.partition_point(|&s| s < at);
        let (s0, s1) = (self.strain[idx - 1], self.strain[idx]);
        let (y0, y1) = (self.stress[idx - 1], self.stress[idx]);
        y0 + (y1 - y0) * (at - s0) / (s1 - s0)
    }

    pub fn resample(&self, grid: &[f64]) -> StressStrainCurve {
        StressStrainCurve {
            strain: grid.to_vec(),
            stress: grid.iter().map(|&s| self.interpolate(s)).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strain,stress_mpa\n");
        for (s, y) in self.strain.iter().zip(&self.stress) {
            out.push_str(&format!("{s},{y}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, PolyError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().trim();
        if header != "strain,stress_mpa" {
            return Err(PolyError::CurveParse(format!(
                "unexpected header: {header:?}"
            )));
        }
        let mut strain = Vec::new();
        let mut stress = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |p: Option<&str>| {
                p.and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| PolyError::CurveParse(format!("line {}: {line:?}", i + 2)))
            };
            strain.push(parse(parts.next())?);
            stress.push(parse(parts.next())?);
        }
        Ok(Self { strain, stress })
    }

    pub fn save_csv(&self, path: &std::path::Path) -> Result<(), PolyError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv(path: &std::path::Path) -> Result<Self, PolyError> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Per-step diagnostics from the Taylor run.
#[derive(Debug, Clone)]
pub struct TaylorStep {
    pub eng_strain: f64,
    /// Averaged first Piola-Kirchhoff axial stress, MPa.
    pub eng_stress: f64,
    /// Averaged Cauchy axial stress, MPa.
    pub cauchy_axial: f64,
    /// Largest |lateral| component of the averaged Cauchy stress, MPa.
    pub lateral_residual: f64,
    /// Largest resolved shear magnitude over grains and systems, MPa.
    pub max_abs_tau: f64,
}

/// Full result of a Taylor tension run.
#[derive(Debug, Clone)]
pub struct TaylorRun {
    pub curve: StressStrainCurve,
    pub steps: Vec<TaylorStep>,
    pub final_states: Vec<MaterialPointState>,
}

struct Aggregate {
    mean_cauchy: Matrix3<f64>,
    states: Vec<MaterialPointState>,
    max_abs_tau: f64,
}

struct TaylorContext<'a> {
    model: &'a CrystalModel,
    rotations: Vec<Matrix3<f64>>,
    fractions: Vec<f64>,
}

impl TaylorContext<'_> {
    /// Integrates every grain at the trial macroscopic gradient and averages
    /// Cauchy stress with a fixed summation order (independent of the worker
    /// count).
    fn evaluate(
        &self,
        f_macro: &Matrix3<f64>,
        states: &[MaterialPointState],
        dt: f64,
    ) -> Result<Aggregate, PolyError> {
        let per_grain: Result<Vec<_>, PolyError> = states
            .par_iter()
            .enumerate()
            .map(|(g, state)| {
                let r = &self.rotations[g];
                let f_crystal = r.transpose() * f_macro * r;
                let (res, new_state) = self
                    .model
                    .integrate_point(&f_crystal, state, dt)
                    .map_err(|source| PolyError::PointFailure { grain: g, source })?;
                let tau = resolved_shear_stress(&res.pk2, &self.model.geometry);
                let max_tau = tau.iter().fold(0.0f64, |m, t| m.max(t.abs()));
                Ok((r * res.cauchy * r.transpose(), new_state, max_tau))
            })
            .collect();
        let per_grain = per_grain?;
        let mut mean_cauchy = Matrix3::zeros();
        let mut max_abs_tau = 0.0f64;
        let mut new_states = Vec::with_capacity(states.len());
        for (g, (sigma, state, max_tau)) in per_grain.into_iter().enumerate() {
            mean_cauchy += self.fractions[g] * sigma;
            max_abs_tau = max_abs_tau.max(max_tau);
            new_states.push(state);
        }
        Ok(Aggregate {
            mean_cauchy,
            states: new_states,
            max_abs_tau,
        })
    }
}

fn lateral_vector(sigma: &Matrix3<f64>) -> Vector5<f64> {
    Vector5::new(
        sigma[(1, 1)],
        sigma[(2, 2)],
        sigma[(0, 1)],
        sigma[(0, 2)],
        sigma[(1, 2)],
    )
}

fn macro_gradient(f11: f64, x: &Vector5<f64>) -> Matrix3<f64> {
    Matrix3::new(
        f11,
        x[2],
        x[3],
        x[2],
        x[0],
        x[4],
        x[3],
        x[4],
        x[1],
    )
}

/// Uniaxial tension of the aggregate under the Taylor assumption.
pub fn run_tension_taylor(
    pop: &GrainPopulation,
    model: &CrystalModel,
    load: &LoadingProgram,
) -> Result<StressStrainCurve, PolyError> {
    Ok(run_tension_taylor_detailed(pop, model, load)?.curve)
}

/// As `run_tension_taylor`, keeping per-step diagnostics and final states.
pub fn run_tension_taylor_detailed(
    pop: &GrainPopulation,
    model: &CrystalModel,
    load: &LoadingProgram,
) -> Result<TaylorRun, PolyError> {
    let ctx = TaylorContext {
        model,
        rotations: pop.grains.iter().map(|g| g.orientation.to_matrix()).collect(),
        fractions: pop.grains.iter().map(|g| g.volume_fraction).collect(),
    };
    let mut states: Vec<MaterialPointState> = pop
        .grains
        .iter()
        .map(|g| MaterialPointState::fresh(&model.params, g.diameter))
        .collect();

    let mut steps = Vec::with_capacity(load.n_steps + 1);
    steps.push(TaylorStep {
        eng_strain: 0.0,
        eng_stress: 0.0,
        cauchy_axial: 0.0,
        lateral_residual: 0.0,
        max_abs_tau: 0.0,
    });

    if load.target_strain > 0.0 {
        let dt_full = load.dt();
        let mut x = Vector5::new(1.0, 1.0, 0.0, 0.0, 0.0);
        let mut x_prev = x;
        let mut jacobian: Option<Matrix5<f64>> = None;
        for k in 1..=load.n_steps {
            let strain_prev = load.target_strain * (k - 1) as f64 / load.n_steps as f64;
            let strain = load.target_strain * k as f64 / load.n_steps as f64;
            // linear extrapolation of the lateral solution as warm start
            let x_guess = if k > 1 { x + (x - x_prev) } else { x };
            let (agg, x_new) = solve_uniaxial_step(
                &ctx,
                &states,
                strain_prev,
                strain,
                x_guess,
                dt_full,
                &mut jacobian,
                0,
            )?;
            let f_macro = macro_gradient(1.0 + strain, &x_new);
            let pk1 = f_macro.determinant()
                * agg.mean_cauchy
                * f_macro.try_inverse().expect("invertible F").transpose();
            steps.push(TaylorStep {
                eng_strain: strain,
                eng_stress: pk1[(0, 0)],
                cauchy_axial: agg.mean_cauchy[(0, 0)],
                lateral_residual: lateral_vector(&agg.mean_cauchy).amax(),
                max_abs_tau: agg.max_abs_tau,
            });
            states = agg.states;
            x_prev = x;
            x = x_new;
        }
    }

    let raw = StressStrainCurve {
        strain: steps.iter().map(|s| s.eng_strain).collect(),
        stress: steps.iter().map(|s| s.eng_stress).collect(),
    };
    let curve = if load.target_strain > 0.0 {
        raw.resample(&load.output_grid)
    } else {
        StressStrainCurve {
            strain: vec![0.0],
            stress: vec![0.0],
        }
    };
    Ok(TaylorRun {
        curve,
        steps,
        final_states: states,
    })
}

/// Newton solve of the five lateral components at one strain target.
///
/// The finite-difference Jacobian is cached across steps and rebuilt when a
/// stale one stops making progress; if a fresh Jacobian also stalls, the
/// strain step itself is halved.
#[allow(clippy::too_many_arguments)]
fn solve_uniaxial_step(
    ctx: &TaylorContext<'_>,
    states: &[MaterialPointState],
    strain_prev: f64,
    strain: f64,
    x_guess: Vector5<f64>,
    dt: f64,
    jacobian: &mut Option<Matrix5<f64>>,
    depth: usize,
) -> Result<(Aggregate, Vector5<f64>), PolyError> {
    const MAX_ITER: usize = 40;
    let f11 = 1.0 + strain;
    let tol_for = |axial: f64| 1e-4 * axial.abs().max(1.0);
    let substep = |jacobian: &mut Option<Matrix5<f64>>| {
        if depth >= 8 {
            return Err(PolyError::LateralNonConvergence { strain });
        }
        let mid = 0.5 * (strain_prev + strain);
        let (half, x_mid) = solve_uniaxial_step(
            ctx,
            states,
            strain_prev,
            mid,
            x_guess,
            dt / 2.0,
            jacobian,
            depth + 1,
        )?;
        solve_uniaxial_step(
            ctx,
            &half.states,
            mid,
            strain,
            x_mid,
            dt / 2.0,
            jacobian,
            depth + 1,
        )
    };

    let mut x = x_guess;
    let mut agg = match ctx.evaluate(&macro_gradient(f11, &x), states, dt) {
        Ok(a) => a,
        Err(PolyError::PointFailure { .. }) => return substep(jacobian),
        Err(e) => return Err(e),
    };
    let mut fresh_jacobian = false;
    for _ in 0..MAX_ITER {
        let r = lateral_vector(&agg.mean_cauchy);
        if r.amax() < tol_for(agg.mean_cauchy[(0, 0)]) {
            return Ok((agg, x));
        }
        if jacobian.is_none() {
            *jacobian = Some(fd_lateral_jacobian(ctx, states, f11, &x, &r, dt)?);
            fresh_jacobian = true;
        }
        let j = jacobian.as_ref().expect("just built");
        let Some(dx) = j.lu().solve(&(-r)) else {
            let had_fresh = fresh_jacobian;
            *jacobian = None;
            if had_fresh {
                return substep(jacobian);
            }
            continue;
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..6 {
            let x_try = x + lambda * dx;
            if let Ok(cand) = ctx.evaluate(&macro_gradient(f11, &x_try), states, dt) {
                if lateral_vector(&cand.mean_cauchy).amax() < r.amax() {
                    accepted = Some((cand, x_try));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((cand, x_new)) => {
                agg = cand;
                x = x_new;
                if lambda < 0.5 {
                    // heavily damped step: refresh the Jacobian next iteration
                    *jacobian = None;
                    fresh_jacobian = false;
                }
            }
            None if !fresh_jacobian => {
                *jacobian = None;
            }
            None => return substep(jacobian),
        }
    }
    substep(jacobian)
}

fn fd_lateral_jacobian(
    ctx: &TaylorContext<'_>,
    states: &[MaterialPointState],
    f11: f64,
    x: &Vector5<f64>,
    r0: &Vector5<f64>,
    dt: f64,
) -> Result<Matrix5<f64>, PolyError> {
    let h = 1e-7;
    let mut j = Matrix5::zeros();
    for col in 0..5 {
        let mut xp = *x;
        xp[col] += h;
        let agg = ctx.evaluate(&macro_gradient(f11, &xp), states, dt)?;
        let r = lateral_vector(&agg.mean_cauchy);
        j.set_column(col, &((r - r0) / h));
    }
    Ok(j)
}

/// Stress at the intersection of the curve with elastic-slope offset lines.
///
/// The elastic modulus is fitted through the origin twice: first on the low
/// 10% of the strain range to estimate the 0.2%-offset stress, then on the
/// points below 40% of that estimate. The first intersection along the curve
/// is reported for each offset.
pub fn yield_and_flow_stress(
    curve: &StressStrainCurve,
    offsets: &[f64],
) -> Result<Vec<f64>, PolyError> {
    curve.validate()?;
    let n = curve.strain.len();
    if n < 3 {
        return Err(PolyError::DegenerateCurve("need at least 3 points".into()));
    }
    let max_strain = curve.strain[n - 1];

    let slope_through_origin = |keep: &dyn Fn(usize) -> bool| -> Option<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut count = 0;
        for i in 1..n {
            if keep(i) {
                num += curve.strain[i] * curve.stress[i];
                den += curve.strain[i] * curve.strain[i];
                count += 1;
            }
        }
        (count >= 2 && den > 0.0).then(|| num / den)
    };

    let e_initial = slope_through_origin(&|i| curve.strain[i] <= 0.1 * max_strain)
        .or_else(|| slope_through_origin(&|i| i <= 2))
        .ok_or_else(|| PolyError::DegenerateCurve("cannot estimate elastic slope".into()))?;
    let yield_estimate = offset_intersection(curve, e_initial, 0.002)
        .unwrap_or(curve.stress[n - 1]);
    let e_final = slope_through_origin(&|i| curve.stress[i] <= 0.4 * yield_estimate)
        .unwrap_or(e_initial);

    offsets
        .iter()
        .map(|&offset| {
            offset_intersection(curve, e_final, offset)
                .ok_or(PolyError::NoIntersection { offset })
        })
        .collect()
}

/// First crossing of the curve with the line stress = e * (strain - offset).
fn offset_intersection(curve: &StressStrainCurve, e: f64, offset: f64) -> Option<f64> {
    let f = |i: usize| curve.stress[i] - e * (curve.strain[i] - offset);
    for i in 1..curve.strain.len() {
        let (f0, f1) = (f(i - 1), f(i));
        if f0 > 0.0 && f1 <= 0.0 {
            let t = f0 / (f0 - f1);
            return Some(curve.stress[i - 1] + t * (curve.stress[i] - curve.stress[i - 1]));
        }
    }
    None
}

/// Mean/std of offset stresses over repeated random-texture realizations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizationRow {
    pub grain_count: usize,
    pub offsets: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Runs `n_realizations` independent random-texture populations per grain
/// count and reports offset-stress statistics.
pub fn realization_study(
    spec: &GrainSizeSpec,
    grain_counts: &[usize],
    n_realizations: usize,
    model: &CrystalModel,
    set: &TextureComponentSet,
    load: &LoadingProgram,
    offsets: &[f64],
    master_seed: u64,
) -> Result<Vec<RealizationRow>, PolyError> {
    assert!(n_realizations >= 2);
    let random_weights = TextureWeights {
        fractions: [0.0; crate::orientations::N_COMPONENTS],
    };
    let mut rows = Vec::with_capacity(grain_counts.len());
    for (ci, &count) in grain_counts.iter().enumerate() {
        let mut per_offset: Vec<Vec<f64>> = vec![Vec::new(); offsets.len()];
        for real in 0..n_realizations {
            let mut rng = crate::rng::stream_rng(
                master_seed,
                "realization-study",
                ((ci as u64) << 32) | real as u64,
            );
            let pop = build_population(spec, count, set, &random_weights, &mut rng)?;
            let curve = run_tension_taylor(&pop, model, load)?;
            let stresses = yield_and_flow_stress(&curve, offsets)?;
            for (j, s) in stresses.into_iter().enumerate() {
                per_offset[j].push(s);
            }
        }
        let mean: Vec<f64> = per_offset
            .iter()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        let std: Vec<f64> = per_offset
            .iter()
            .zip(&mean)
            .map(|(v, &m)| {
                (v.iter().map(|&s| (s - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
            })
            .collect();
        rows.push(RealizationRow {
            grain_count: count,
            offsets: offsets.to_vec(),
            mean,
            std,
        });
    }
    Ok(rows)
}
