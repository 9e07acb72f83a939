//! Implicit backward-Euler update of the material-point state.
//!
//! The step solves for the 12 slip increments with a damped Newton iteration.
//! The plastic deformation gradient is advanced with the exponential map of
//! the accumulated plastic velocity gradient, which keeps det(Fp) = 1 to
//! machine precision regardless of step size. Non-convergent or over-driven
//! steps sub-step recursively along a linearly interpolated deformation path.

use nalgebra::{Matrix3, Matrix6, SMatrix, SVector, Vector6};

use super::{
    back_stress_implicit, rho_implicit, stress_to_voigt, CpError, CubicElasticity,
    MaterialParams, MaterialPointState, SlipSystemGeometry, StressResult, N_SLIP,
};

type SlipVector = SVector<f64, N_SLIP>;
type SlipMatrix = SMatrix<f64, N_SLIP, N_SLIP>;

/// Newton and sub-stepping controls for the point integrator.
#[derive(Debug, Clone)]
pub struct IntegrationOptions {
    /// Convergence tolerance on max |R_a| (dimensionless slip).
    pub newton_tol: f64,
    pub max_iterations: usize,
    /// Backtracking factor for the damped Newton line search.
    pub line_search_factor: f64,
    pub max_line_search: usize,
    /// Maximum admissible |tau - X| / tau_c before a step-size error.
    pub rate_cap: f64,
    /// Recursion limit for step halving.
    pub max_substep_depth: usize,
    /// Total central-difference width on strain components for the tangent.
    pub tangent_perturbation: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_iterations: 50,
            line_search_factor: 0.5,
            max_line_search: 12,
            rate_cap: 10.0,
            max_substep_depth: 16,
            tangent_perturbation: 1e-7,
        }
    }
}

/// A material bundled with its slip geometry, elasticity, and solver options.
///
/// Immutable after construction; safe to share across worker threads.
#[derive(Debug, Clone)]
pub struct CrystalModel {
    pub params: MaterialParams,
    pub elasticity: CubicElasticity,
    pub geometry: SlipSystemGeometry,
    pub options: IntegrationOptions,
    /// Small-strain sensitivity d tau_a / d dgamma_b used for the Newton
    /// Jacobian: sym(P_a) : C : sym(P_b).
    tau_sensitivity: SlipMatrix,
}

impl CrystalModel {
    pub fn new(params: MaterialParams) -> Result<Self, CpError> {
        Self::with_options(params, IntegrationOptions::default())
    }

    pub fn with_options(
        params: MaterialParams,
        options: IntegrationOptions,
    ) -> Result<Self, CpError> {
        params.validate()?;
        let elasticity = CubicElasticity::from_params(&params)?;
        let geometry = SlipSystemGeometry::fcc();
        let mut q = SlipMatrix::zeros();
        for b in 0..N_SLIP {
            let sym_pb = 0.5 * (geometry.schmid[b] + geometry.schmid[b].transpose());
            let c_pb = elasticity.contract(&sym_pb);
            for a in 0..N_SLIP {
                q[(a, b)] = geometry.schmid[a].dot(&c_pb);
            }
        }
        Ok(Self {
            params,
            elasticity,
            geometry,
            options,
            tau_sensitivity: q,
        })
    }

    /// Advances the state to the imposed deformation gradient over `dt` and
    /// returns the stress without the algorithmic tangent.
    pub fn integrate_point(
        &self,
        f_new: &Matrix3<f64>,
        state: &MaterialPointState,
        dt: f64,
    ) -> Result<(StressResult, MaterialPointState), CpError> {
        let (sol, new_state) = self.advance(state, f_new, dt, 0)?;
        Ok((
            StressResult {
                cauchy: sol.cauchy(),
                pk2: sol.s_pk2,
                tangent: None,
            },
            new_state,
        ))
    }

    /// As `integrate_point`, plus the 6x6 tangent d(dsigma)/d(deps) by central
    /// differencing of the strain increment (two perturbed re-solves per
    /// component).
    pub fn integrate_point_with_tangent(
        &self,
        f_new: &Matrix3<f64>,
        state: &MaterialPointState,
        dt: f64,
    ) -> Result<(StressResult, MaterialPointState), CpError> {
        let mut schedule = Vec::new();
        let (sol, new_state) =
            self.advance_recording(state, f_new, dt, 0, 0.0, 1.0, Some(&mut schedule))?;
        let tangent = self.perturbation_tangent(state, f_new, dt, &schedule)?;
        Ok((
            StressResult {
                cauchy: sol.cauchy(),
                pk2: sol.s_pk2,
                tangent: Some(tangent),
            },
            new_state,
        ))
    }

    fn advance(
        &self,
        state: &MaterialPointState,
        f_target: &Matrix3<f64>,
        dt: f64,
        depth: usize,
    ) -> Result<(StepEval, MaterialPointState), CpError> {
        self.advance_recording(state, f_target, dt, depth, 0.0, 1.0, None)
    }

    /// Sub-stepping advance. When `schedule` is given, the end fraction and
    /// converged slip increments of each committed leaf step (along the
    /// f_total -> f_target segment) are recorded so a perturbed re-solve can
    /// replay the identical path on the same root branch.
    #[allow(clippy::too_many_arguments)]
    fn advance_recording(
        &self,
        state: &MaterialPointState,
        f_target: &Matrix3<f64>,
        dt: f64,
        depth: usize,
        frac_lo: f64,
        frac_hi: f64,
        mut schedule: Option<&mut Vec<(f64, SlipVector)>>,
    ) -> Result<(StepEval, MaterialPointState), CpError> {
        match self.solve_step(state, f_target, dt, None) {
            Ok(eval) => {
                let mut next = state.clone();
                next.fp = expm3(&eval.plastic_flow()) * state.fp;
                next.rho_ssd = eval.rho;
                next.back_stress = eval.x;
                next.f_total = *f_target;
                next.last_slip = eval.d.into();
                if let Some(s) = schedule.as_mut() {
                    s.push((frac_hi, eval.d));
                }
                Ok((eval, next))
            }
            Err(e @ (CpError::RateCapExceeded { .. } | CpError::NonConvergence { .. })) => {
                if depth >= self.options.max_substep_depth {
                    let (residual, ratio) = match e {
                        CpError::NonConvergence { residual, .. } => (residual, f64::NAN),
                        CpError::RateCapExceeded { ratio, .. } => (f64::NAN, ratio),
                        _ => unreachable!(),
                    };
                    return Err(CpError::SubstepLimit {
                        depth,
                        residual,
                        ratio,
                    });
                }
                let f_mid = 0.5 * (state.f_total + f_target);
                let frac_mid = 0.5 * (frac_lo + frac_hi);
                let (_, half) = self.advance_recording(
                    state,
                    &f_mid,
                    dt / 2.0,
                    depth + 1,
                    frac_lo,
                    frac_mid,
                    schedule.as_deref_mut(),
                )?;
                self.advance_recording(
                    &half,
                    f_target,
                    dt / 2.0,
                    depth + 1,
                    frac_mid,
                    frac_hi,
                    schedule,
                )
            }
            Err(e) => Err(e),
        }
    }

    /// Re-solves along a previously recorded sub-step schedule, interpolating
    /// the deformation path linearly between the state's gradient and the
    /// (perturbed) target. Each leg starts from the unperturbed converged
    /// slip increments: near symmetric states the slip solution is not
    /// unique, and seeding on the recorded branch keeps the perturbed
    /// response on it. Falls back to free sub-stepping if a leg fails.
    fn advance_along(
        &self,
        state: &MaterialPointState,
        f_target: &Matrix3<f64>,
        dt: f64,
        schedule: &[(f64, SlipVector)],
    ) -> Result<(StepEval, MaterialPointState), CpError> {
        let f_start = state.f_total;
        let mut current = state.clone();
        let mut prev_frac = 0.0;
        let mut last = None;
        for &(frac, d_branch) in schedule {
            let f_k = f_start + (f_target - f_start) * frac;
            let dt_k = dt * (frac - prev_frac);
            let (eval, next) = match self.solve_step(&current, &f_k, dt_k, Some(d_branch)) {
                Ok(eval) => {
                    let mut next = current.clone();
                    next.fp = expm3(&eval.plastic_flow()) * current.fp;
                    next.rho_ssd = eval.rho;
                    next.back_stress = eval.x;
                    next.f_total = f_k;
                    next.last_slip = eval.d.into();
                    (eval, next)
                }
                Err(CpError::RateCapExceeded { .. } | CpError::NonConvergence { .. }) => {
                    self.advance(&current, &f_k, dt_k, 0)?
                }
                Err(e) => return Err(e),
            };
            current = next;
            prev_frac = frac;
            last = Some(eval);
        }
        Ok((last.expect("non-empty schedule"), current))
    }

    /// Damped Newton on the slip increments for one (sub-)step.
    ///
    /// The iteration seeds from `d_start` when given, otherwise from the
    /// previous converged increments, otherwise from the elastic trial.
    fn solve_step(
        &self,
        state: &MaterialPointState,
        f_target: &Matrix3<f64>,
        dt: f64,
        d_start: Option<SlipVector>,
    ) -> Result<StepEval, CpError> {
        let fp_inv = state
            .fp
            .try_inverse()
            .expect("plastic deformation gradient is invertible (det = 1)");
        let fe_trial = f_target * fp_inv;

        let warm = d_start.unwrap_or_else(|| SlipVector::from(state.last_slip));
        let mut eval = if warm != SlipVector::zeros() {
            match self.evaluate(state, &fe_trial, warm, dt) {
                Ok(e) => e,
                Err(_) => self.evaluate(state, &fe_trial, SlipVector::zeros(), dt)?,
            }
        } else {
            self.evaluate(state, &fe_trial, SlipVector::zeros(), dt)?
        };
        let mut used_fd = false;
        for iteration in 0..self.options.max_iterations {
            let rnorm = eval.residual.amax();
            if rnorm < self.options.newton_tol {
                return Ok(eval);
            }
            let jacobian = if used_fd {
                self.fd_jacobian(state, &fe_trial, &eval, dt)?
            } else {
                self.analytic_jacobian(&eval, dt)
            };
            let delta = jacobian
                .lu()
                .solve(&(-eval.residual))
                .ok_or(CpError::NonConvergence {
                    residual: rnorm,
                    iterations: iteration,
                })?;

            let mut accepted = None;
            let mut lambda = 1.0;
            for _ in 0..self.options.max_line_search {
                let d_try = eval.d + lambda * delta;
                if let Ok(candidate) = self.evaluate(state, &fe_trial, d_try, dt) {
                    if candidate.residual.amax() < rnorm * (1.0 - 1e-4 * lambda) {
                        accepted = Some(candidate);
                        break;
                    }
                }
                lambda *= self.options.line_search_factor;
            }
            match accepted {
                Some(candidate) => eval = candidate,
                None if !used_fd => used_fd = true,
                // roundoff floor: the damped iteration can stall just above
                // the nominal tolerance at slip-reversal kinks; a residual of
                // 1e-8 still resolves stress to ~1e-3 MPa
                None if rnorm < 1e-8 => return Ok(eval),
                None => {
                    return Err(CpError::NonConvergence {
                        residual: rnorm,
                        iterations: iteration,
                    })
                }
            }
        }
        Err(CpError::NonConvergence {
            residual: eval.residual.amax(),
            iterations: self.options.max_iterations,
        })
    }

    /// Residual and implied quantities at a trial slip-increment vector.
    fn evaluate(
        &self,
        state: &MaterialPointState,
        fe_trial: &Matrix3<f64>,
        d: SlipVector,
        dt: f64,
    ) -> Result<StepEval, CpError> {
        let p = &self.params;
        let flow = {
            let mut a = Matrix3::zeros();
            for b in 0..N_SLIP {
                a += d[b] * self.geometry.schmid[b];
            }
            a
        };
        let fe = fe_trial * expm3(&(-flow));
        let ee = 0.5 * (fe.transpose() * fe - Matrix3::identity());
        let s_pk2 = self.elasticity.contract(&ee);

        let mut tau = [0.0; N_SLIP];
        let mut rho = [0.0; N_SLIP];
        let mut x = [0.0; N_SLIP];
        let mut tau_c = [0.0; N_SLIP];
        let mut eta = [0.0; N_SLIP];
        let mut rate_abs = [0.0; N_SLIP];
        let mut residual = SlipVector::zeros();
        let agb = p.a_geo * p.g_shear * p.b_burgers;
        for a in 0..N_SLIP {
            tau[a] = self.geometry.schmid[a].dot(&s_pk2);
            rho[a] = rho_implicit(state.rho_ssd[a], d[a].abs(), state.l_mean[a], p);
            if !(rho[a] > 0.0) {
                return Err(CpError::NonPositiveDensity { system: a });
            }
            x[a] = back_stress_implicit(state.back_stress[a], d[a], p);
            tau_c[a] = agb * (rho[a].sqrt() + p.b_size / state.l_mean[a]);
            let eff = tau[a] - x[a];
            let ratio = eff.abs() / tau_c[a];
            if ratio > self.options.rate_cap {
                return Err(CpError::RateCapExceeded {
                    system: a,
                    ratio,
                    cap: self.options.rate_cap,
                });
            }
            eta[a] = eff / tau_c[a];
            if ratio > 0.0 {
                rate_abs[a] = p.gamma_dot_0 * ratio.powf(p.n_exp);
                residual[a] = d[a] - dt * rate_abs[a] * eff.signum();
            } else {
                residual[a] = d[a];
            }
        }
        Ok(StepEval {
            d,
            residual,
            fe,
            s_pk2,
            tau,
            rho,
            x,
            tau_c,
            eta,
            rate_abs,
            flow,
        })
    }

    /// Closed-form Jacobian that neglects the geometric coupling of the
    /// exponential map (exact to first order in the elastic strain). The
    /// finite-difference Jacobian is the fallback when this one stalls.
    fn analytic_jacobian(&self, eval: &StepEval, dt: f64) -> SlipMatrix {
        let p = &self.params;
        let agb = p.a_geo * p.g_shear * p.b_burgers;
        let cb = p.c_hard / p.b_burgers;
        let mut j = SlipMatrix::identity();
        for a in 0..N_SLIP {
            let eta_abs = eval.eta[a].abs();
            if eta_abs == 0.0 {
                continue;
            }
            // |eta|^(n-1) recycled from the residual's power-law evaluation
            let prefac = dt * p.n_exp * eval.rate_abs[a] / eta_abs;
            let g = eval.d[a].abs();
            let sgn = if eval.d[a] == 0.0 {
                0.0
            } else {
                eval.d[a].signum()
            };
            // implicit sensitivities of the state update
            let dx = (p.e_kin - p.f_kin * sgn * eval.x[a]) / (1.0 + p.f_kin * g);
            let xr = eval.rho[a].sqrt();
            let l = eval.tau_c[a] / agb - xr; // = B/L
            let dxr = (cb * xr + cb * l - p.d_soft * xr * xr)
                / (2.0 * xr * (1.0 + p.d_soft * g) - cb * g);
            let dtau_c = agb * dxr * sgn;
            for b in 0..N_SLIP {
                let dtau = -self.tau_sensitivity[(a, b)];
                let mut deta = dtau / eval.tau_c[a];
                if a == b {
                    deta -= (dx + eval.eta[a] * dtau_c) / eval.tau_c[a];
                }
                j[(a, b)] -= prefac * deta;
            }
        }
        j
    }

    fn fd_jacobian(
        &self,
        state: &MaterialPointState,
        fe_trial: &Matrix3<f64>,
        eval: &StepEval,
        dt: f64,
    ) -> Result<SlipMatrix, CpError> {
        let h = 1e-8;
        let mut j = SlipMatrix::zeros();
        for b in 0..N_SLIP {
            let mut d_pert = eval.d;
            d_pert[b] += h;
            let pert = self.evaluate(state, fe_trial, d_pert, dt)?;
            for a in 0..N_SLIP {
                j[(a, b)] = (pert.residual[a] - eval.residual[a]) / h;
            }
        }
        Ok(j)
    }

    /// Central-difference tangent d(dsigma)/d(deps) about the converged step.
    ///
    /// Every perturbed re-solve replays the unperturbed sub-step schedule, so
    /// the difference never straddles a sub-stepping decision boundary.
    fn perturbation_tangent(
        &self,
        state: &MaterialPointState,
        f_new: &Matrix3<f64>,
        dt: f64,
        schedule: &[(f64, SlipVector)],
    ) -> Result<Matrix6<f64>, CpError> {
        let h = self.options.tangent_perturbation;
        let mut tangent = Matrix6::zeros();
        for j in 0..6 {
            let strain_dir = voigt_strain_direction(j);
            let f_plus = (Matrix3::identity() + (h / 2.0) * strain_dir) * f_new;
            let f_minus = (Matrix3::identity() - (h / 2.0) * strain_dir) * f_new;
            let (sol_p, _) = self.advance_along(state, &f_plus, dt, schedule)?;
            let (sol_m, _) = self.advance_along(state, &f_minus, dt, schedule)?;
            let col: Vector6<f64> =
                (stress_to_voigt(&sol_p.cauchy()) - stress_to_voigt(&sol_m.cauchy())) / h;
            tangent.set_column(j, &col);
        }
        Ok(tangent)
    }
}

/// Unit strain tensor for Voigt component `j` (engineering shears: a unit
/// gamma_12 perturbation carries 1/2 on each off-diagonal).
fn voigt_strain_direction(j: usize) -> Matrix3<f64> {
    let mut e = Matrix3::zeros();
    match j {
        0 => e[(0, 0)] = 1.0,
        1 => e[(1, 1)] = 1.0,
        2 => e[(2, 2)] = 1.0,
        3 => {
            e[(0, 1)] = 0.5;
            e[(1, 0)] = 0.5;
        }
        4 => {
            e[(0, 2)] = 0.5;
            e[(2, 0)] = 0.5;
        }
        5 => {
            e[(1, 2)] = 0.5;
            e[(2, 1)] = 0.5;
        }
        _ => unreachable!(),
    }
    e
}

/// Converged per-step quantities.
struct StepEval {
    d: SlipVector,
    residual: SlipVector,
    fe: Matrix3<f64>,
    s_pk2: Matrix3<f64>,
    #[allow(dead_code)]
    tau: [f64; N_SLIP],
    rho: [f64; N_SLIP],
    x: [f64; N_SLIP],
    tau_c: [f64; N_SLIP],
    eta: [f64; N_SLIP],
    /// gamma_dot_0 |eta|^n per system at this iterate.
    rate_abs: [f64; N_SLIP],
    flow: Matrix3<f64>,
}

impl StepEval {
    fn plastic_flow(&self) -> Matrix3<f64> {
        self.flow
    }

    fn cauchy(&self) -> Matrix3<f64> {
        let det = self.fe.determinant();
        self.fe * self.s_pk2 * self.fe.transpose() / det
    }
}

/// Matrix exponential of a 3x3 by scaling-and-squaring with an order-12
/// Taylor series. Traceless arguments map to unit-determinant results to
/// machine precision.
fn expm3(a: &Matrix3<f64>) -> Matrix3<f64> {
    let norm = a.norm();
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as u32
    } else {
        0
    };
    let b = a / 2f64.powi(squarings as i32);
    let mut term = Matrix3::identity();
    let mut sum = Matrix3::identity();
    for k in 1..=12 {
        term = term * b / k as f64;
        sum += term;
        if term.norm() < 1e-17 {
            break;
        }
    }
    let mut out = sum;
    for _ in 0..squarings {
        out *= out;
    }
    out
}
