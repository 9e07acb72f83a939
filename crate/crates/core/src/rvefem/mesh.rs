//! Voxelized polycrystal on a structured hexahedral grid.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::polycrystal::GrainSizeSpec;

use super::FemError;

/// Cubic voxel mesh with one grain id per element.
///
/// Voxels are enumerated row-major with x fastest, then y, then z; nodes use
/// the same ordering on the (n+1) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelMesh {
    pub n_elem_per_edge: usize,
    /// Cube edge length, um.
    pub edge_length: f64,
    pub n_grains: usize,
    /// Grain id per voxel, len = n_elem_per_edge^3.
    pub grain_ids: Vec<usize>,
    /// Equivalent-sphere diameter per grain, um.
    pub grain_diameters: Vec<f64>,
}

impl VoxelMesh {
    pub fn n_elements(&self) -> usize {
        self.n_elem_per_edge.pow(3)
    }

    pub fn n_nodes_per_edge(&self) -> usize {
        self.n_elem_per_edge + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes_per_edge().pow(3)
    }

    pub fn element_size(&self) -> f64 {
        self.edge_length / self.n_elem_per_edge as f64
    }

    pub fn elements_per_grain(&self) -> f64 {
        self.n_elements() as f64 / self.n_grains as f64
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let m = self.n_nodes_per_edge();
        i + j * m + k * m * m
    }

    pub fn element_index(&self, i: usize, j: usize, k: usize) -> usize {
        let n = self.n_elem_per_edge;
        i + j * n + k * n * n
    }

    /// The 8 node indices of element (i, j, k), standard counter-clockwise
    /// bottom-then-top order.
    pub fn element_nodes(&self, i: usize, j: usize, k: usize) -> [usize; 8] {
        [
            self.node_index(i, j, k),
            self.node_index(i + 1, j, k),
            self.node_index(i + 1, j + 1, k),
            self.node_index(i, j + 1, k),
            self.node_index(i, j, k + 1),
            self.node_index(i + 1, j, k + 1),
            self.node_index(i + 1, j + 1, k + 1),
            self.node_index(i, j + 1, k + 1),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mesh serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, FemError> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Assigns voxels to seeds by multiplicatively weighted Voronoi distance:
/// nearest `|x - c_i| / r_i`, with radii proportional to sampled diameters so
/// larger grains capture proportionally larger cells.
pub fn voxelize_seeded(
    seeds: &[Vector3<f64>],
    diameters: &[f64],
    n_elem_per_edge: usize,
    edge_length: f64,
) -> Result<VoxelMesh, FemError> {
    assert_eq!(seeds.len(), diameters.len());
    let n = n_elem_per_edge;
    assert!(n >= 2, "need at least 2 elements per edge");
    let n_grains = seeds.len();
    if n_grains > n * n * n {
        return Err(FemError::TooManyGrains {
            n_grains,
            n_voxels: n * n * n,
        });
    }
    let h = edge_length / n as f64;
    let mut grain_ids = vec![0usize; n * n * n];
    let mut counts = vec![0usize; n_grains];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let center = Vector3::new(
                    (i as f64 + 0.5) * h,
                    (j as f64 + 0.5) * h,
                    (k as f64 + 0.5) * h,
                );
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (g, seed) in seeds.iter().enumerate() {
                    let d = (center - seed).norm() / (0.5 * diameters[g]);
                    if d < best_d {
                        best_d = d;
                        best = g;
                    }
                }
                grain_ids[i + j * n + k * n * n] = best;
                counts[best] += 1;
            }
        }
    }
    // Every seed claims the voxel containing it: at coarse resolutions the
    // smallest grains are entitled to less than one voxel by volume and would
    // otherwise vanish from the id map.
    let voxel_of = |seed: &Vector3<f64>| -> usize {
        let clamp = |x: f64| ((x / h) as usize).min(n - 1);
        clamp(seed[0]) + clamp(seed[1]) * n + clamp(seed[2]) * n * n
    };
    for (g, seed) in seeds.iter().enumerate() {
        if counts[g] == 0 {
            let v = voxel_of(seed);
            let owner = grain_ids[v];
            if counts[owner] <= 1 {
                return Err(FemError::EmptyGrain { grain: g });
            }
            counts[owner] -= 1;
            grain_ids[v] = g;
            counts[g] += 1;
        }
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(FemError::EmptyGrain { grain: empty });
    }
    Ok(VoxelMesh {
        n_elem_per_edge: n,
        edge_length,
        n_grains,
        grain_ids,
        grain_diameters: diameters.to_vec(),
    })
}

/// Draws uniform seed points and truncated-normal diameters for one
/// tessellation candidate.
pub fn draw_seeds<R: Rng + ?Sized>(
    n_grains: usize,
    edge_length: f64,
    spec: &GrainSizeSpec,
    rng: &mut R,
) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let seeds = (0..n_grains)
        .map(|_| {
            Vector3::new(
                rng.gen::<f64>() * edge_length,
                rng.gen::<f64>() * edge_length,
                rng.gen::<f64>() * edge_length,
            )
        })
        .collect();
    let diameters = (0..n_grains).map(|_| spec.sample_diameter(rng)).collect();
    (seeds, diameters)
}

/// Weighted-Voronoi voxel assignment with automatic seed resampling when a
/// grain captures no voxels (at most 10 attempts).
pub fn voxelize<R: Rng + ?Sized>(
    n_grains: usize,
    n_elem_per_edge: usize,
    edge_length: f64,
    spec: &GrainSizeSpec,
    rng: &mut R,
) -> Result<VoxelMesh, FemError> {
    spec.validate().map_err(|e| FemError::InvalidInput(e.to_string()))?;
    let mut last_err = None;
    for _ in 0..10 {
        let (seeds, diameters) = draw_seeds(n_grains, edge_length, spec, rng);
        match voxelize_seeded(&seeds, &diameters, n_elem_per_edge, edge_length) {
            Ok(mesh) => return Ok(mesh),
            Err(e @ FemError::EmptyGrain { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn single_grain_fills_the_cube() {
        let seeds = vec![Vector3::new(20.0, 20.0, 20.0)];
        let mesh = voxelize_seeded(&seeds, &[20.0], 4, 40.0).unwrap();
        assert!(mesh.grain_ids.iter().all(|&g| g == 0));
        assert_eq!(mesh.n_elements(), 64);
    }

    #[test]
    fn mean_elements_per_grain_matches_refinement_arithmetic() {
        let spec = GrainSizeSpec::default();
        let mut rng = stream_rng(1, "voxel", 0);
        // 25 grains on a 10^3 grid of a 40 um cube: 40 elements per grain
        let mesh = voxelize(25, 10, 40.0, &spec, &mut rng).unwrap();
        assert_eq!(mesh.elements_per_grain(), 40.0);
        assert!((mesh.element_size() - 4.0).abs() < 1e-12);
        // 190 grains on a 20^3 grid of an 80 um cube: ~42 elements per grain
        let mesh = voxelize(190, 20, 80.0, &spec, &mut rng).unwrap();
        assert!((mesh.elements_per_grain() - 42.0).abs() < 0.2);
        assert!((mesh.element_size() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_more_grains_than_voxels() {
        let spec = GrainSizeSpec::default();
        let mut rng = stream_rng(2, "voxel-overfull", 0);
        assert!(matches!(
            voxelize(100, 2, 40.0, &spec, &mut rng),
            Err(FemError::TooManyGrains { .. })
        ));
    }

    #[test]
    fn every_grain_owns_at_least_one_voxel() {
        let spec = GrainSizeSpec::default();
        let mut rng = stream_rng(3, "voxel-cover", 0);
        let mesh = voxelize(25, 5, 40.0, &spec, &mut rng).unwrap();
        let mut counts = vec![0usize; mesh.n_grains];
        for &g in &mesh.grain_ids {
            counts[g] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        assert_eq!(counts.iter().sum::<usize>(), 125);
    }

    #[test]
    fn mesh_json_roundtrip() {
        let spec = GrainSizeSpec::default();
        let mut rng = stream_rng(4, "voxel-json", 0);
        let mesh = voxelize(8, 4, 40.0, &spec, &mut rng).unwrap();
        let back = VoxelMesh::from_json(&mesh.to_json()).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn voxelize_is_deterministic_per_seed() {
        let spec = GrainSizeSpec::default();
        let a = voxelize(12, 6, 40.0, &spec, &mut stream_rng(5, "voxel-det", 1)).unwrap();
        let b = voxelize(12, 6, 40.0, &spec, &mut stream_rng(5, "voxel-det", 1)).unwrap();
        assert_eq!(a, b);
    }
}
