//! Structured-grid nonlinear FE solve with the crystal-plasticity point model.
//!
//! Trilinear hexahedra with 2x2x2 Gauss quadrature on a uniform voxel grid.
//! The internal force follows B^T sigma; the tangent stiffness contracts the
//! per-point perturbation tangent with the same strain-displacement operator.
//! Newton updates solve a symmetrized system with a Jacobi-preconditioned
//! conjugate-gradient iteration, matrix-free over the element matrices.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3};
use rayon::prelude::*;

use crate::cpcore::{stress_to_voigt, voigt_to_stress, CrystalModel, MaterialPointState};
use crate::orientations::EulerAngles;
use crate::polycrystal::{LoadingProgram, StressStrainCurve};

use super::mesh::VoxelMesh;
use super::FemError;

const N_GP: usize = 8;
type ElementMatrix = SMatrix<f64, 24, 24>;
type ElementVector = SMatrix<f64, 24, 1>;
type BMatrix = SMatrix<f64, 6, 24>;

/// Deformation measure handed to the constitutive model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kinematics {
    /// F = I + grad u (total Lagrangian; default).
    LargeStrain,
    /// F = I + sym(grad u); retained as a debugging aid.
    SmallStrain,
}

/// Dirichlet data for one loading step.
#[derive(Debug, Clone)]
pub enum BoundaryCondition {
    /// x = 0 face fixed axially, x = L face displaced by strain * L, lateral
    /// faces traction-free, rigid-body motion pinned at two corners.
    AxialTension { strain: f64 },
    /// u = (F - I) X prescribed on every boundary node.
    Affine { f: Matrix3<f64> },
}

/// Converged state of one loading step.
#[derive(Debug, Clone)]
pub struct FeSolution {
    /// Nodal displacements, um, 3 dofs per node.
    pub displacements: Vec<f64>,
    pub states: Vec<MaterialPointState>,
    /// Axial reaction on the displaced face, uN.
    pub reaction_loaded: f64,
    /// Axial reaction on the fixed face, uN.
    pub reaction_fixed: f64,
    pub residual_norm: f64,
    pub newton_iterations: usize,
}

/// Solver tolerances.
#[derive(Debug, Clone)]
pub struct FemOptions {
    pub kinematics: Kinematics,
    /// Relative force-residual tolerance against the reaction norm.
    pub newton_rtol: f64,
    pub max_newton: usize,
    pub cg_rtol: f64,
    pub max_bisection_depth: usize,
}

impl Default for FemOptions {
    fn default() -> Self {
        Self {
            kinematics: Kinematics::LargeStrain,
            newton_rtol: 1e-8,
            max_newton: 30,
            cg_rtol: 1e-10,
            max_bisection_depth: 8,
        }
    }
}

/// Precomputed quadrature data shared by every element of the uniform grid.
struct Quadrature {
    /// dN/dX per Gauss point per node.
    dndx: [[Vector3<f64>; 8]; N_GP],
    /// Integration weight (det J), um^3.
    weight: f64,
}

impl Quadrature {
    fn for_mesh(mesh: &VoxelMesh) -> Self {
        let h = mesh.element_size();
        let g = 1.0 / 3.0_f64.sqrt();
        let corners: [[f64; 3]; 8] = [
            [-1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0],
            [1.0, 1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
            [1.0, -1.0, 1.0],
            [1.0, 1.0, 1.0],
            [-1.0, 1.0, 1.0],
        ];
        let mut dndx = [[Vector3::zeros(); 8]; N_GP];
        for (gp, corner) in corners.iter().enumerate() {
            // Gauss point at the scaled corner position
            let (xi, eta, zeta) = (corner[0] * g, corner[1] * g, corner[2] * g);
            for (node, nc) in corners.iter().enumerate() {
                let (xn, yn, zn) = (nc[0], nc[1], nc[2]);
                let dxi = xn * (1.0 + eta * yn) * (1.0 + zeta * zn) / 8.0;
                let deta = yn * (1.0 + xi * xn) * (1.0 + zeta * zn) / 8.0;
                let dzeta = zn * (1.0 + xi * xn) * (1.0 + eta * yn) / 8.0;
                // uniform cube: dX/dxi = h/2 on the diagonal
                dndx[gp][node] = Vector3::new(dxi, deta, dzeta) * (2.0 / h);
            }
        }
        Self {
            dndx,
            weight: (h / 2.0).powi(3),
        }
    }
}

/// 6x6 Voigt rotation taking crystal-frame stress to the sample frame.
fn voigt_stress_rotation(r: &Matrix3<f64>) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for q in 0..6 {
        let mut unit = nalgebra::Vector6::zeros();
        unit[q] = 1.0;
        let tensor = voigt_to_stress(&unit);
        let rotated = r * tensor * r.transpose();
        m.set_column(q, &stress_to_voigt(&rotated));
    }
    m
}

struct ElementContribution {
    f_int: ElementVector,
    stiffness: Option<ElementMatrix>,
    states: Vec<MaterialPointState>,
}

/// Assembled residual plus element stiffnesses for the matrix-free solve.
pub struct Assembly {
    pub f_int: Vec<f64>,
    element_k: Vec<ElementMatrix>,
    pub states: Vec<MaterialPointState>,
    pub diag: Vec<f64>,
}

/// The FE problem bound to one mesh and grain-orientation assignment.
pub struct FemProblem<'a> {
    pub mesh: &'a VoxelMesh,
    pub model: &'a CrystalModel,
    pub options: FemOptions,
    quad: Quadrature,
    /// Crystal-to-sample rotation per grain.
    rotations: Vec<Matrix3<f64>>,
    /// Voigt rotation per grain, crystal to sample.
    voigt_rotations: Vec<Matrix6<f64>>,
    /// Element node lists.
    connectivity: Vec<[usize; 8]>,
}

impl<'a> FemProblem<'a> {
    pub fn new(
        mesh: &'a VoxelMesh,
        model: &'a CrystalModel,
        orientations: &[EulerAngles],
        options: FemOptions,
    ) -> Result<Self, FemError> {
        if orientations.len() != mesh.n_grains {
            return Err(FemError::InvalidInput(format!(
                "{} orientations for {} grains",
                orientations.len(),
                mesh.n_grains
            )));
        }
        let rotations: Vec<Matrix3<f64>> =
            orientations.iter().map(|e| e.to_matrix()).collect();
        let voigt_rotations = rotations.iter().map(voigt_stress_rotation).collect();
        let n = mesh.n_elem_per_edge;
        let mut connectivity = Vec::with_capacity(mesh.n_elements());
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    connectivity.push(mesh.element_nodes(i, j, k));
                }
            }
        }
        Ok(Self {
            mesh,
            model,
            options,
            quad: Quadrature::for_mesh(mesh),
            rotations,
            voigt_rotations,
            connectivity,
        })
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.mesh.n_nodes()
    }

    /// Fresh Gauss-point states; the mean slip distance of each point is its
    /// grain's equivalent-sphere diameter.
    pub fn fresh_states(&self) -> Vec<MaterialPointState> {
        let mut states = Vec::with_capacity(self.mesh.n_elements() * N_GP);
        for e in 0..self.mesh.n_elements() {
            let grain = self.mesh.grain_ids[e];
            let l = self.mesh.grain_diameters[grain];
            for _ in 0..N_GP {
                states.push(MaterialPointState::fresh(&self.model.params, l));
            }
        }
        states
    }

    /// Internal force, per-element tangent stiffness, and trial states at the
    /// given displacement vector. Element loops run in parallel; the global
    /// scatter is sequential in element order so results do not depend on the
    /// worker count.
    pub fn assemble(
        &self,
        u: &[f64],
        states: &[MaterialPointState],
        dt: f64,
        want_tangent: bool,
    ) -> Result<Assembly, FemError> {
        let contributions: Result<Vec<ElementContribution>, FemError> = (0..self
            .connectivity
            .len())
            .into_par_iter()
            .map(|e| self.element_contribution(e, u, states, dt, want_tangent))
            .collect();
        let contributions = contributions?;

        let mut f_int = vec![0.0; self.n_dofs()];
        let mut diag = vec![0.0; self.n_dofs()];
        let mut element_k = Vec::with_capacity(if want_tangent {
            contributions.len()
        } else {
            0
        });
        let mut new_states = vec![MaterialPointState::fresh(&self.model.params, 1.0); 0];
        new_states.reserve(states.len());
        for (e, contrib) in contributions.into_iter().enumerate() {
            let nodes = &self.connectivity[e];
            for (local, &node) in nodes.iter().enumerate() {
                for a in 0..3 {
                    f_int[3 * node + a] += contrib.f_int[3 * local + a];
                }
            }
            if let Some(k) = contrib.stiffness {
                for (li, &ni) in nodes.iter().enumerate() {
                    for a in 0..3 {
                        diag[3 * ni + a] += k[(3 * li + a, 3 * li + a)];
                    }
                }
                element_k.push(k);
            }
            new_states.extend(contrib.states);
        }
        Ok(Assembly {
            f_int,
            element_k,
            states: new_states,
            diag,
        })
    }

    /// Sample-frame Cauchy stress at every Gauss point, re-integrating from
    /// the given pre-step states at the displacement field `u`.
    pub fn gauss_point_stresses(
        &self,
        u: &[f64],
        states: &[MaterialPointState],
        dt: f64,
    ) -> Result<Vec<Matrix3<f64>>, FemError> {
        let mut out = Vec::with_capacity(self.mesh.n_elements() * N_GP);
        for e in 0..self.connectivity.len() {
            let nodes = &self.connectivity[e];
            let grain = self.mesh.grain_ids[e];
            let rot = &self.rotations[grain];
            let mut u_e = [Vector3::zeros(); 8];
            for (local, &node) in nodes.iter().enumerate() {
                u_e[local] = Vector3::new(u[3 * node], u[3 * node + 1], u[3 * node + 2]);
            }
            for gp in 0..N_GP {
                let dndx = &self.quad.dndx[gp];
                let mut grad = Matrix3::zeros();
                for node in 0..8 {
                    grad += u_e[node] * dndx[node].transpose();
                }
                let f_sample = Matrix3::identity() + grad;
                let f_crystal = rot.transpose() * f_sample * rot;
                let (result, _) = self
                    .model
                    .integrate_point(&f_crystal, &states[e * N_GP + gp], dt)
                    .map_err(|source| FemError::Point {
                        element: e,
                        gauss: gp,
                        source,
                    })?;
                out.push(rot * result.cauchy * rot.transpose());
            }
        }
        Ok(out)
    }

    fn element_contribution(
        &self,
        e: usize,
        u: &[f64],
        states: &[MaterialPointState],
        dt: f64,
        want_tangent: bool,
    ) -> Result<ElementContribution, FemError> {
        let nodes = &self.connectivity[e];
        let grain = self.mesh.grain_ids[e];
        let rot = &self.rotations[grain];
        let voigt_rot = &self.voigt_rotations[grain];

        let mut u_e = [Vector3::zeros(); 8];
        for (local, &node) in nodes.iter().enumerate() {
            u_e[local] = Vector3::new(u[3 * node], u[3 * node + 1], u[3 * node + 2]);
        }

        let mut f_int = ElementVector::zeros();
        let mut stiffness = want_tangent.then(ElementMatrix::zeros);
        let mut out_states = Vec::with_capacity(N_GP);
        for gp in 0..N_GP {
            let dndx = &self.quad.dndx[gp];
            let mut grad = Matrix3::zeros();
            for node in 0..8 {
                grad += u_e[node] * dndx[node].transpose();
            }
            let f_sample = match self.options.kinematics {
                Kinematics::LargeStrain => Matrix3::identity() + grad,
                Kinematics::SmallStrain => {
                    Matrix3::identity() + 0.5 * (grad + grad.transpose())
                }
            };
            let f_crystal = rot.transpose() * f_sample * rot;
            let state = &states[e * N_GP + gp];
            let (result, new_state) = if want_tangent {
                self.model
                    .integrate_point_with_tangent(&f_crystal, state, dt)
            } else {
                self.model.integrate_point(&f_crystal, state, dt)
            }
            .map_err(|source| FemError::Point {
                element: e,
                gauss: gp,
                source,
            })?;
            out_states.push(new_state);

            let sigma_sample = rot * result.cauchy * rot.transpose();
            let sigma_v = stress_to_voigt(&sigma_sample);

            let b = b_matrix(dndx);
            f_int += b.transpose() * sigma_v * self.quad.weight;

            if let Some(k) = stiffness.as_mut() {
                let tangent_c = result.tangent.expect("tangent requested");
                let tangent_s = voigt_rot * tangent_c * voigt_rot.transpose();
                // symmetrize so CG applies; the perturbation tangent is
                // symmetric to O(h) already
                let db = tangent_s * b;
                let mut k_gp = b.transpose() * db * self.quad.weight;
                k_gp = 0.5 * (k_gp + k_gp.transpose());
                *k += k_gp;
            }
        }
        Ok(ElementContribution {
            f_int,
            stiffness,
            states: out_states,
        })
    }

    /// Matrix-vector product of the assembled tangent, with constrained dofs
    /// acting as identity rows/columns.
    fn matvec(
        &self,
        assembly: &Assembly,
        constrained: &[bool],
        x: &[f64],
        y: &mut [f64],
        scratch: &mut [f64],
    ) {
        scratch.copy_from_slice(x);
        for (s, &c) in scratch.iter_mut().zip(constrained) {
            if c {
                *s = 0.0;
            }
        }
        y.iter_mut().for_each(|v| *v = 0.0);
        for (e, k) in assembly.element_k.iter().enumerate() {
            let nodes = &self.connectivity[e];
            let mut x_e = ElementVector::zeros();
            for (local, &node) in nodes.iter().enumerate() {
                for a in 0..3 {
                    x_e[3 * local + a] = scratch[3 * node + a];
                }
            }
            let y_e = k * x_e;
            for (local, &node) in nodes.iter().enumerate() {
                for a in 0..3 {
                    y[3 * node + a] += y_e[3 * local + a];
                }
            }
        }
        for i in 0..y.len() {
            if constrained[i] {
                y[i] = x[i];
            }
        }
    }

    /// Jacobi-preconditioned conjugate gradients on the constrained system.
    fn solve_linear(
        &self,
        assembly: &Assembly,
        constrained: &[bool],
        rhs: &[f64],
    ) -> Result<Vec<f64>, FemError> {
        let n = rhs.len();
        let mut b = rhs.to_vec();
        for i in 0..n {
            if constrained[i] {
                b[i] = 0.0;
            }
        }
        let b_norm = norm(&b);
        if b_norm == 0.0 {
            return Ok(vec![0.0; n]);
        }
        let inv_diag: Vec<f64> = (0..n)
            .map(|i| {
                if constrained[i] {
                    1.0
                } else if assembly.diag[i].abs() > 1e-300 {
                    1.0 / assembly.diag[i]
                } else {
                    1.0
                }
            })
            .collect();

        let mut x = vec![0.0; n];
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
        let mut p = z.clone();
        let mut rz: f64 = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let max_iter = 20 * n;
        for _ in 0..max_iter {
            self.matvec(assembly, constrained, &p, &mut ap, &mut scratch);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(FemError::Singular {
                    detail: format!("non-positive curvature in CG (p.Ap = {pap:.3e}); \
                                     check boundary-condition constraint coverage"),
                });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm(&r) <= self.options.cg_rtol * b_norm {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] * inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(FemError::Singular {
            detail: "conjugate gradients exhausted the iteration budget".into(),
        })
    }

    /// Dirichlet dof list for a boundary condition.
    pub fn dirichlet(&self, bc: &BoundaryCondition) -> Vec<(usize, f64)> {
        let mesh = self.mesh;
        let m = mesh.n_nodes_per_edge();
        let l = mesh.edge_length;
        let mut out = Vec::new();
        match bc {
            BoundaryCondition::AxialTension { strain } => {
                for k in 0..m {
                    for j in 0..m {
                        out.push((3 * mesh.node_index(0, j, k), 0.0));
                        out.push((3 * mesh.node_index(m - 1, j, k), strain * l));
                    }
                }
                // pins removing the remaining rigid-body modes
                let origin = mesh.node_index(0, 0, 0);
                out.push((3 * origin + 1, 0.0));
                out.push((3 * origin + 2, 0.0));
                let y_corner = mesh.node_index(0, m - 1, 0);
                out.push((3 * y_corner + 2, 0.0));
            }
            BoundaryCondition::Affine { f } => {
                let grad = f - Matrix3::identity();
                let h = mesh.element_size();
                for k in 0..m {
                    for j in 0..m {
                        for i in 0..m {
                            let boundary = i == 0
                                || j == 0
                                || k == 0
                                || i == m - 1
                                || j == m - 1
                                || k == m - 1;
                            if !boundary {
                                continue;
                            }
                            let xp =
                                Vector3::new(i as f64 * h, j as f64 * h, k as f64 * h);
                            let u = grad * xp;
                            let node = mesh.node_index(i, j, k);
                            for a in 0..3 {
                                out.push((3 * node + a, u[a]));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// One Newton-Raphson load step from the given states.
    ///
    /// `u_guess` seeds the iteration (the prescribed dofs are overwritten
    /// with the boundary values before the first residual).
    pub fn solve_step(
        &self,
        states: &[MaterialPointState],
        bc: &BoundaryCondition,
        dt: f64,
        u_guess: &[f64],
    ) -> Result<FeSolution, FemError> {
        let n = self.n_dofs();
        assert_eq!(u_guess.len(), n);
        let dirichlet = self.dirichlet(bc);
        let mut constrained = vec![false; n];
        let mut u = u_guess.to_vec();
        for &(dof, value) in &dirichlet {
            constrained[dof] = true;
            u[dof] = value;
        }

        let mut residual_norm = f64::INFINITY;
        for iteration in 0..self.options.max_newton {
            let assembly = self.assemble(&u, states, dt, true)?;
            let mut r = vec![0.0; n];
            let mut reaction_sq = 0.0;
            for i in 0..n {
                if constrained[i] {
                    reaction_sq += assembly.f_int[i] * assembly.f_int[i];
                } else {
                    r[i] = -assembly.f_int[i];
                }
            }
            residual_norm = norm(&r);
            let reference = reaction_sq.sqrt().max(1e-12);
            if residual_norm <= self.options.newton_rtol * reference {
                return Ok(self.finish(assembly, u, residual_norm, iteration));
            }
            let delta = self.solve_linear(&assembly, &constrained, &r)?;
            let step_norm = delta.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            for i in 0..n {
                if !constrained[i] {
                    u[i] += delta[i];
                }
            }
            if step_norm < 1e-12 * self.mesh.edge_length {
                // displacement update stalled at numerical precision
                let assembly = self.assemble(&u, states, dt, false)?;
                return Ok(self.finish(assembly, u, residual_norm, iteration + 1));
            }
        }
        Err(FemError::NonConvergence {
            residual: residual_norm,
            iterations: self.options.max_newton,
        })
    }

    fn finish(
        &self,
        assembly: Assembly,
        u: Vec<f64>,
        residual_norm: f64,
        newton_iterations: usize,
    ) -> FeSolution {
        let m = self.mesh.n_nodes_per_edge();
        let mut reaction_loaded = 0.0;
        let mut reaction_fixed = 0.0;
        for k in 0..m {
            for j in 0..m {
                reaction_fixed += assembly.f_int[3 * self.mesh.node_index(0, j, k)];
                reaction_loaded += assembly.f_int[3 * self.mesh.node_index(m - 1, j, k)];
            }
        }
        FeSolution {
            displacements: u,
            states: assembly.states,
            reaction_loaded,
            reaction_fixed,
            residual_norm,
            newton_iterations,
        }
    }
}

fn b_matrix(dndx: &[Vector3<f64>; 8]) -> BMatrix {
    let mut b = BMatrix::zeros();
    for node in 0..8 {
        let (dx, dy, dz) = (dndx[node][0], dndx[node][1], dndx[node][2]);
        let c = 3 * node;
        b[(0, c)] = dx;
        b[(1, c + 1)] = dy;
        b[(2, c + 2)] = dz;
        // engineering shear rows in Voigt order 12, 13, 23
        b[(3, c)] = dy;
        b[(3, c + 1)] = dx;
        b[(4, c)] = dz;
        b[(4, c + 2)] = dx;
        b[(5, c + 1)] = dz;
        b[(5, c + 2)] = dy;
    }
    b
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Uniaxial tension of the voxel RVE: engineering stress from the loaded-face
/// reaction over the initial area, engineering strain from the applied ramp.
pub fn run_tension_fem(
    mesh: &VoxelMesh,
    model: &CrystalModel,
    orientations: &[EulerAngles],
    load: &LoadingProgram,
    options: FemOptions,
) -> Result<StressStrainCurve, FemError> {
    let problem = FemProblem::new(mesh, model, orientations, options)?;
    let mut states = problem.fresh_states();
    let mut u = vec![0.0; problem.n_dofs()];
    let area = mesh.edge_length * mesh.edge_length;

    let mut strain_points = vec![0.0];
    let mut stress_points = vec![0.0];
    if load.target_strain > 0.0 {
        let dt_full = load.dt();
        let mut strain_prev = 0.0;
        for k in 1..=load.n_steps {
            let strain = load.target_strain * k as f64 / load.n_steps as f64;
            // predictor: scale the previous displacement field with the ramp
            let scale = if strain_prev > 0.0 {
                strain / strain_prev
            } else {
                0.0
            };
            for v in u.iter_mut() {
                *v *= scale;
            }
            let solution =
                advance_fem(&problem, &states, strain_prev, strain, dt_full, &u, 0)?;
            states = solution.states.clone();
            u = solution.displacements.clone();
            strain_points.push(strain);
            // engineering stress from the fixed-face reaction (equal and
            // opposite to the loaded face at equilibrium)
            stress_points.push(-solution.reaction_fixed / area);
            strain_prev = strain;
        }
    }
    let raw = StressStrainCurve {
        strain: strain_points,
        stress: stress_points,
    };
    Ok(if load.target_strain > 0.0 {
        raw.resample(&load.output_grid)
    } else {
        raw
    })
}

/// Load step with automatic bisection on Newton failure.
fn advance_fem(
    problem: &FemProblem<'_>,
    states: &[MaterialPointState],
    strain_prev: f64,
    strain: f64,
    dt: f64,
    u_guess: &[f64],
    depth: usize,
) -> Result<FeSolution, FemError> {
    match problem.solve_step(
        states,
        &BoundaryCondition::AxialTension { strain },
        dt,
        u_guess,
    ) {
        Ok(solution) => Ok(solution),
        Err(FemError::NonConvergence { .. }) if depth < problem.options.max_bisection_depth => {
            let mid = 0.5 * (strain_prev + strain);
            let half =
                advance_fem(problem, states, strain_prev, mid, dt / 2.0, u_guess, depth + 1)?;
            advance_fem(
                problem,
                &half.states,
                mid,
                strain,
                dt / 2.0,
                &half.displacements,
                depth + 1,
            )
        }
        Err(e) => Err(e),
    }
}
