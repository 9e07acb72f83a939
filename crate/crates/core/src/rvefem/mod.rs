//! Full-field crystal-plasticity FE on voxelized polycrystals.
//!
//! A deliberately small solver: structured trilinear hexahedra, Newton on the
//! force residual, matrix-free preconditioned conjugate gradients. It exists
//! for mesh-refinement studies and as a full-field cross-check of the Taylor
//! aggregate, not as a general-purpose FE code.

mod mesh;
mod solver;
mod study;

pub use mesh::{draw_seeds, voxelize, voxelize_seeded, VoxelMesh};
pub use solver::{
    run_tension_fem, Assembly, BoundaryCondition, FeSolution, FemOptions, FemProblem,
    Kinematics,
};
pub use study::{mesh_convergence_study, MeshStudy, MeshStudyRow};

use thiserror::Error;

use crate::cpcore::CpError;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("{n_grains} grains cannot fill {n_voxels} voxels")]
    TooManyGrains { n_grains: usize, n_voxels: usize },
    #[error("grain {grain} captured no voxels")]
    EmptyGrain { grain: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("element {element}, gauss point {gauss}: {source}")]
    Point {
        element: usize,
        gauss: usize,
        source: CpError,
    },
    #[error("Newton failed to converge (residual {residual:.3e} after {iterations} iterations)")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("linear system is singular: {detail}")]
    Singular { detail: String },
    #[error("mesh file parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}
