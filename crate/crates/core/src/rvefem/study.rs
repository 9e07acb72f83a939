//! Mesh-refinement study on a fixed grain population.

use serde::{Deserialize, Serialize};

use crate::cpcore::CrystalModel;
use crate::orientations::{
    generate_grain_orientations, EulerAngles, TextureComponentSet, TextureWeights,
    N_COMPONENTS,
};
use crate::polycrystal::{GrainSizeSpec, LoadingProgram};

use super::mesh::{draw_seeds, voxelize_seeded};
use super::solver::{run_tension_fem, FemOptions};
use super::FemError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshStudyRow {
    pub n_elem_per_edge: usize,
    pub elements_per_grain: f64,
    /// Flow stress (MPa) at each report strain.
    pub stresses: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshStudy {
    pub report_strains: Vec<f64>,
    pub rows: Vec<MeshStudyRow>,
    /// Relative change between successive refinements, per report strain;
    /// empty with a single refinement level.
    pub successive_changes: Vec<Vec<f64>>,
}

impl MeshStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_elem_per_edge,elements_per_grain");
        for s in &self.report_strains {
            out.push_str(&format!(",stress_at_{s}"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{}",
                row.n_elem_per_edge, row.elements_per_grain
            ));
            for v in &row.stresses {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs the same grain population (identical seeds, sizes, orientations) on
/// each refinement and reports flow stresses plus successive relative changes.
#[allow(clippy::too_many_arguments)]
pub fn mesh_convergence_study(
    refinements: &[usize],
    n_grains: usize,
    edge_length: f64,
    size_spec: &GrainSizeSpec,
    model: &CrystalModel,
    load: &LoadingProgram,
    report_strains: &[f64],
    seed: u64,
) -> Result<MeshStudy, FemError> {
    assert!(!refinements.is_empty(), "need at least one refinement level");
    size_spec
        .validate()
        .map_err(|e| FemError::InvalidInput(e.to_string()))?;

    // one population candidate must tessellate every refinement without
    // empty grains; retry with fresh seeds otherwise
    let set = TextureComponentSet::default();
    let random = TextureWeights {
        fractions: [0.0; N_COMPONENTS],
    };
    let mut chosen: Option<(Vec<super::VoxelMesh>, Vec<EulerAngles>)> = None;
    let mut last_err = None;
    for attempt in 0..10 {
        let mut rng = crate::rng::stream_rng(seed, "mesh-study-population", attempt);
        let (seeds, diameters) = draw_seeds(n_grains, edge_length, size_spec, &mut rng);
        let orientations = generate_grain_orientations(&set, &random, n_grains, &mut rng)
            .map_err(|e| FemError::InvalidInput(e.to_string()))?;
        let mut meshes = Vec::with_capacity(refinements.len());
        let mut ok = true;
        for &n in refinements {
            match voxelize_seeded(&seeds, &diameters, n, edge_length) {
                Ok(mesh) => meshes.push(mesh),
                Err(e @ FemError::EmptyGrain { .. }) => {
                    last_err = Some(e);
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if ok {
            chosen = Some((meshes, orientations));
            break;
        }
    }
    let (meshes, orientations) =
        chosen.ok_or_else(|| last_err.expect("attempts exhausted imply an empty-grain error"))?;

    let mut rows = Vec::with_capacity(meshes.len());
    for mesh in &meshes {
        let curve = run_tension_fem(mesh, model, &orientations, load, FemOptions::default())?;
        let stresses = report_strains.iter().map(|&s| curve.interpolate(s)).collect();
        rows.push(MeshStudyRow {
            n_elem_per_edge: mesh.n_elem_per_edge,
            elements_per_grain: mesh.elements_per_grain(),
            stresses,
        });
    }

    let mut successive_changes = Vec::new();
    for pair in rows.windows(2) {
        let changes = pair[0]
            .stresses
            .iter()
            .zip(&pair[1].stresses)
            .map(|(a, b)| ((b - a) / a).abs())
            .collect();
        successive_changes.push(changes);
    }
    Ok(MeshStudy {
        report_strains: report_strains.to_vec(),
        rows,
        successive_changes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpcore::MaterialParams;

    #[test]
    fn single_level_gives_one_row_and_no_deltas() {
        let model = CrystalModel::new(MaterialParams::default()).unwrap();
        let load = LoadingProgram::to_strain(0.001, 1e-3, 2, 3);
        let study = mesh_convergence_study(
            &[3],
            4,
            40.0,
            &GrainSizeSpec::default(),
            &model,
            &load,
            &[0.001],
            11,
        )
        .unwrap();
        assert_eq!(study.rows.len(), 1);
        assert!(study.successive_changes.is_empty());
        assert_eq!(study.rows[0].elements_per_grain, 27.0 / 4.0);
    }

    #[test]
    fn identical_levels_give_zero_delta() {
        let model = CrystalModel::new(MaterialParams::default()).unwrap();
        let load = LoadingProgram::to_strain(0.001, 1e-3, 2, 3);
        let study = mesh_convergence_study(
            &[3, 3],
            4,
            40.0,
            &GrainSizeSpec::default(),
            &model,
            &load,
            &[0.0005, 0.001],
            11,
        )
        .unwrap();
        assert_eq!(study.rows.len(), 2);
        assert_eq!(study.successive_changes.len(), 1);
        assert!(study.successive_changes[0].iter().all(|&d| d == 0.0));
    }
}
