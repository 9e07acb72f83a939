//! Single-crystal elastoviscoplastic constitutive model.
//!
//! The model combines a multiplicative elastic/plastic split of the
//! deformation gradient, cubic anisotropic elasticity on the intermediate
//! configuration, power-law slip kinetics on the 12 FCC {111}<110> systems,
//! Kocks-Mecking-Estrin evolution of the statistically stored dislocation
//! density, and Armstrong-Frederick back-stress. Units are MPa, micrometers,
//! and seconds throughout.

mod integrate;

pub use integrate::{CrystalModel, IntegrationOptions};

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of FCC octahedral slip systems.
pub const N_SLIP: usize = 12;

#[derive(Debug, Error)]
pub enum CpError {
    #[error("elastic constants not positive definite: C11={c11}, C12={c12}, C44={c44}")]
    ElasticNotPositiveDefinite { c11: f64, c12: f64, c44: f64 },
    #[error("material parameter out of range: {0}")]
    InvalidParameter(String),
    #[error("effective stress ratio {ratio:.3} exceeds rate cap {cap} on system {system}")]
    RateCapExceeded { system: usize, ratio: f64, cap: f64 },
    #[error("slip-increment Newton failed to converge (residual {residual:.3e} after {iterations} iterations)")]
    NonConvergence { residual: f64, iterations: usize },
    #[error(
        "sub-stepping passed minimum step size (depth {depth}); last residual {residual:.3e}, max |tau/tau_c| {ratio:.3}"
    )]
    SubstepLimit { depth: usize, residual: f64, ratio: f64 },
    #[error("dislocation density became non-positive on system {system}")]
    NonPositiveDensity { system: usize },
}

/// Slip directions and plane normals of the 12 FCC systems, crystal frame.
#[derive(Debug, Clone)]
pub struct SlipSystemGeometry {
    pub s0: [Vector3<f64>; N_SLIP],
    pub n0: [Vector3<f64>; N_SLIP],
    /// Schmid tensors s0 (x) n0.
    pub schmid: [Matrix3<f64>; N_SLIP],
}

impl SlipSystemGeometry {
    /// The {111}<110> octahedral family.
    pub fn fcc() -> Self {
        const PLANES: [[f64; 3]; 4] = [
            [1.0, 1.0, 1.0],
            [-1.0, 1.0, 1.0],
            [1.0, -1.0, 1.0],
            [1.0, 1.0, -1.0],
        ];
        const DIRS: [[[f64; 3]; 3]; 4] = [
            [[0.0, 1.0, -1.0], [1.0, 0.0, -1.0], [1.0, -1.0, 0.0]],
            [[0.0, 1.0, -1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]],
            [[0.0, 1.0, 1.0], [1.0, 0.0, -1.0], [1.0, 1.0, 0.0]],
            [[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, -1.0, 0.0]],
        ];
        let mut s0 = [Vector3::zeros(); N_SLIP];
        let mut n0 = [Vector3::zeros(); N_SLIP];
        let mut schmid = [Matrix3::zeros(); N_SLIP];
        for (p, plane) in PLANES.iter().enumerate() {
            for (d, dir) in DIRS[p].iter().enumerate() {
                let a = 3 * p + d;
                n0[a] = Vector3::from_column_slice(plane).normalize();
                s0[a] = Vector3::from_column_slice(dir).normalize();
                schmid[a] = s0[a] * n0[a].transpose();
            }
        }
        Self { s0, n0, schmid }
    }
}

/// Constitutive constants. Stresses in MPa, lengths in micrometers, rates in 1/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// Cubic elastic constants, MPa.
    #[serde(rename = "C11")]
    pub c11: f64,
    #[serde(rename = "C12")]
    pub c12: f64,
    #[serde(rename = "C44")]
    pub c44: f64,
    /// Reference slip rate, 1/s.
    pub gamma_dot_0: f64,
    /// Power-law exponent.
    pub n_exp: f64,
    /// Geometric factor in the Taylor slip-resistance relation.
    #[serde(rename = "A_geo")]
    pub a_geo: f64,
    /// Shear modulus, MPa.
    #[serde(rename = "G_shear")]
    pub g_shear: f64,
    /// Burgers vector magnitude, micrometers.
    pub b_burgers: f64,
    /// Grain-size factor multiplying 1/L in the slip resistance.
    #[serde(rename = "B_size")]
    pub b_size: f64,
    /// Dislocation storage constant.
    #[serde(rename = "C_hard")]
    pub c_hard: f64,
    /// Dynamic-recovery (softening) constant.
    #[serde(rename = "D_soft")]
    pub d_soft: f64,
    /// Kinematic hardening modulus, MPa.
    #[serde(rename = "E_kin")]
    pub e_kin: f64,
    /// Kinematic softening constant.
    #[serde(rename = "F_kin")]
    pub f_kin: f64,
    /// Initial SSD density, 1/um^2.
    pub rho_ssd_init: f64,
}

impl Default for MaterialParams {
    /// Plausible austenitic-steel constants; the plastic set is meant to be
    /// overridden by calibration rather than taken as a material datum.
    fn default() -> Self {
        Self {
            c11: 204_600.0,
            c12: 137_700.0,
            c44: 126_200.0,
            gamma_dot_0: 1e-3,
            n_exp: 20.0,
            a_geo: 0.3,
            g_shear: 77_000.0,
            b_burgers: 2.56e-4,
            b_size: 30.0,
            c_hard: 0.33,
            d_soft: 51.0,
            e_kin: 3_000.0,
            f_kin: 100.0,
            rho_ssd_init: 10.0,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<(), CpError> {
        let positive = [
            ("C11", self.c11),
            ("C12", self.c12),
            ("C44", self.c44),
            ("gamma_dot_0", self.gamma_dot_0),
            ("A_geo", self.a_geo),
            ("G_shear", self.g_shear),
            ("b_burgers", self.b_burgers),
            ("C_hard", self.c_hard),
            ("rho_ssd_init", self.rho_ssd_init),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(CpError::InvalidParameter(format!("{name} = {v} must be > 0")));
            }
        }
        let non_negative = [
            ("B_size", self.b_size),
            ("D_soft", self.d_soft),
            ("E_kin", self.e_kin),
            ("F_kin", self.f_kin),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) {
                return Err(CpError::InvalidParameter(format!("{name} = {v} must be >= 0")));
            }
        }
        if !(self.n_exp >= 1.0) {
            return Err(CpError::InvalidParameter(format!(
                "n_exp = {} must be >= 1",
                self.n_exp
            )));
        }
        check_elastic_definite(self.c11, self.c12, self.c44)?;
        Ok(())
    }

    /// Initial critically resolved shear stress for mean slip distance `l` (um).
    pub fn tau_c_init(&self, l: f64) -> f64 {
        self.a_geo
            * self.g_shear
            * self.b_burgers
            * (self.rho_ssd_init.sqrt() + self.b_size / l)
    }
}

fn check_elastic_definite(c11: f64, c12: f64, c44: f64) -> Result<(), CpError> {
    if c11 - c12 > 0.0 && c11 + 2.0 * c12 > 0.0 && c44 > 0.0 && c11 > c12.abs() {
        Ok(())
    } else {
        Err(CpError::ElasticNotPositiveDefinite { c11, c12, c44 })
    }
}

/// Cubic elasticity acting on the intermediate configuration.
///
/// The Voigt representation uses the stress/strain order (11, 22, 33, 12, 13,
/// 23) with engineering (doubled) shear strains, so `voigt * strain` equals
/// the full fourth-rank double contraction.
#[derive(Debug, Clone)]
pub struct CubicElasticity {
    pub voigt: Matrix6<f64>,
}

impl CubicElasticity {
    pub fn new(c11: f64, c12: f64, c44: f64) -> Result<Self, CpError> {
        check_elastic_definite(c11, c12, c44)?;
        let mut m = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = if i == j { c11 } else { c12 };
            }
            m[(i + 3, i + 3)] = c44;
        }
        Ok(Self { voigt: m })
    }

    pub fn from_params(p: &MaterialParams) -> Result<Self, CpError> {
        Self::new(p.c11, p.c12, p.c44)
    }

    /// Zener anisotropy ratio 2 C44 / (C11 - C12).
    pub fn zener_ratio(&self) -> f64 {
        2.0 * self.voigt[(3, 3)] / (self.voigt[(0, 0)] - self.voigt[(0, 1)])
    }

    /// Double contraction with a symmetric strain tensor.
    pub fn contract(&self, strain: &Matrix3<f64>) -> Matrix3<f64> {
        let e = strain_to_voigt(strain);
        let s = self.voigt * e;
        voigt_to_stress(&s)
    }
}

/// Symmetric tensor to Voigt strain vector (engineering shears).
pub fn strain_to_voigt(e: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(
        e[(0, 0)],
        e[(1, 1)],
        e[(2, 2)],
        e[(0, 1)] + e[(1, 0)],
        e[(0, 2)] + e[(2, 0)],
        e[(1, 2)] + e[(2, 1)],
    )
}

/// Symmetric tensor to Voigt stress vector.
pub fn stress_to_voigt(s: &Matrix3<f64>) -> Vector6<f64> {
    Vector6::new(
        s[(0, 0)],
        s[(1, 1)],
        s[(2, 2)],
        0.5 * (s[(0, 1)] + s[(1, 0)]),
        0.5 * (s[(0, 2)] + s[(2, 0)]),
        0.5 * (s[(1, 2)] + s[(2, 1)]),
    )
}

/// Voigt stress vector back to a symmetric tensor.
pub fn voigt_to_stress(v: &Vector6<f64>) -> Matrix3<f64> {
    Matrix3::new(v[0], v[3], v[4], v[3], v[1], v[5], v[4], v[5], v[2])
}

/// Evolving state at one material point.
///
/// `f_total` records the deformation gradient the state was last converged
/// at; sub-stepping interpolates the deformation path between it and the
/// newly imposed gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialPointState {
    /// Plastic deformation gradient, det = 1.
    pub fp: Matrix3<f64>,
    /// SSD density per system, 1/um^2.
    pub rho_ssd: [f64; N_SLIP],
    /// Back-stress per system, MPa.
    pub back_stress: [f64; N_SLIP],
    /// Mean slip distance per system, um.
    pub l_mean: [f64; N_SLIP],
    /// Total deformation gradient at the last converged update.
    pub f_total: Matrix3<f64>,
    /// Slip increments of the last converged step; warm start for the next
    /// Newton solve. Zero on a fresh state.
    #[serde(default)]
    pub last_slip: [f64; N_SLIP],
}

impl MaterialPointState {
    /// Virgin state for a grain with mean slip distance `l` (um).
    pub fn fresh(p: &MaterialParams, l: f64) -> Self {
        Self {
            fp: Matrix3::identity(),
            rho_ssd: [p.rho_ssd_init; N_SLIP],
            back_stress: [0.0; N_SLIP],
            l_mean: [l; N_SLIP],
            f_total: Matrix3::identity(),
            last_slip: [0.0; N_SLIP],
        }
    }

    /// Current critically resolved shear stress per system.
    pub fn tau_c(&self, p: &MaterialParams) -> [f64; N_SLIP] {
        let mut out = [0.0; N_SLIP];
        for a in 0..N_SLIP {
            out[a] = p.a_geo
                * p.g_shear
                * p.b_burgers
                * (self.rho_ssd[a].sqrt() + p.b_size / self.l_mean[a]);
        }
        out
    }
}

/// Stress output of one constitutive update.
#[derive(Debug, Clone)]
pub struct StressResult {
    /// Cauchy stress, MPa, frame of the imposed deformation gradient.
    pub cauchy: Matrix3<f64>,
    /// Second Piola-Kirchhoff stress on the intermediate configuration, MPa.
    pub pk2: Matrix3<f64>,
    /// d(delta sigma)/d(delta epsilon) in Voigt order (11, 22, 33, 12, 13, 23)
    /// with engineering shear strains; present only when requested.
    pub tangent: Option<Matrix6<f64>>,
}

/// Resolved shear stress on each system: tau_a = s0_a . S . n0_a.
pub fn resolved_shear_stress(
    pk2: &Matrix3<f64>,
    geom: &SlipSystemGeometry,
) -> [f64; N_SLIP] {
    let mut tau = [0.0; N_SLIP];
    for a in 0..N_SLIP {
        tau[a] = (geom.s0[a].transpose() * pk2 * geom.n0[a])[(0, 0)];
    }
    tau
}

/// Power-law slip rates at the given state.
///
/// Signals a step-size error when the effective stress ratio exceeds `cap`
/// on any system; the integrator reacts by sub-stepping.
pub fn slip_rates(
    tau: &[f64; N_SLIP],
    state: &MaterialPointState,
    p: &MaterialParams,
    cap: f64,
) -> Result<[f64; N_SLIP], CpError> {
    let tau_c = state.tau_c(p);
    let mut rates = [0.0; N_SLIP];
    for a in 0..N_SLIP {
        let eff = tau[a] - state.back_stress[a];
        let ratio = eff.abs() / tau_c[a];
        if ratio > cap {
            return Err(CpError::RateCapExceeded {
                system: a,
                ratio,
                cap,
            });
        }
        if ratio > 0.0 {
            rates[a] = p.gamma_dot_0 * ratio.powf(p.n_exp) * eff.signum();
        }
    }
    Ok(rates)
}

/// Implicit update of the SSD density for one system.
///
/// Solves rho_new = rho_old + [C/b (sqrt(rho_new) + B/L) - D rho_new] |dgamma|
/// exactly via the positive root of the quadratic in sqrt(rho_new).
pub(crate) fn rho_implicit(rho_old: f64, dgamma_abs: f64, l: f64, p: &MaterialParams) -> f64 {
    let g = dgamma_abs;
    if g == 0.0 {
        return rho_old;
    }
    let cb = p.c_hard / p.b_burgers;
    let a2 = 1.0 + p.d_soft * g;
    let a1 = cb * g;
    let a0 = rho_old + cb * (p.b_size / l) * g;
    let x = (a1 + (a1 * a1 + 4.0 * a2 * a0).sqrt()) / (2.0 * a2);
    x * x
}

/// Implicit Armstrong-Frederick update of the back-stress for one system.
pub(crate) fn back_stress_implicit(x_old: f64, dgamma: f64, p: &MaterialParams) -> f64 {
    (x_old + p.e_kin * dgamma) / (1.0 + p.f_kin * dgamma.abs())
}

/// Advances SSD densities and back-stresses over `dt` at fixed slip rates,
/// using the same implicit scheme as the stress update. `fp` and `f_total`
/// are untouched.
pub fn evolve_state(
    state: &MaterialPointState,
    gamma_dot: &[f64; N_SLIP],
    dt: f64,
    p: &MaterialParams,
) -> Result<MaterialPointState, CpError> {
    debug_assert!(dt > 0.0);
    let mut out = state.clone();
    for a in 0..N_SLIP {
        let dgamma = gamma_dot[a] * dt;
        let rho = rho_implicit(state.rho_ssd[a], dgamma.abs(), state.l_mean[a], p);
        if !(rho > 0.0) {
            return Err(CpError::NonPositiveDensity { system: a });
        }
        out.rho_ssd[a] = rho;
        out.back_stress[a] = back_stress_implicit(state.back_stress[a], dgamma, p);
    }
    Ok(out)
}
