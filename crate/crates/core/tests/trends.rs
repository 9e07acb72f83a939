//! Aggregate-level physical trends that tie texture to the stress response.

use polytex::cpcore::{CrystalModel, MaterialParams};
use polytex::orientations::{TextureComponentSet, TextureWeights, N_COMPONENTS};
use polytex::polycrystal::{
    build_population, run_tension_taylor, yield_and_flow_stress, GrainSizeSpec, LoadingProgram,
};
use polytex::rng::stream_rng;

/// An all-Cube and an all-Random population of 615 grains differ in offset
/// stress by more than the realization scatter: the texture signal exceeds
/// the aggregate-sampling noise at the production grain count.
#[test]
fn texture_signal_exceeds_realization_noise_at_615_grains() {
    let model = CrystalModel::new(MaterialParams::default()).unwrap();
    let set = TextureComponentSet::default();
    let spec = GrainSizeSpec::default();
    let load = LoadingProgram::to_strain(0.015, 1e-3, 30, 31);
    let offsets = [0.002];

    let offset_stress = |weights: &TextureWeights, stream: u64| -> f64 {
        let mut rng = stream_rng(77, "texture-signal", stream);
        let pop = build_population(&spec, 615, &set, weights, &mut rng).unwrap();
        let curve = run_tension_taylor(&pop, &model, &load).unwrap();
        yield_and_flow_stress(&curve, &offsets).unwrap()[0]
    };

    let mut cube = [0.0; N_COMPONENTS];
    cube[0] = 1.0;
    let cube_weights = TextureWeights { fractions: cube };
    let random_weights = TextureWeights {
        fractions: [0.0; N_COMPONENTS],
    };

    let sigma_cube = offset_stress(&cube_weights, 0);
    let sigma_random = offset_stress(&random_weights, 0);

    // realization scatter of the random texture at the same grain count
    let draws: Vec<f64> = (1..=6).map(|r| offset_stress(&random_weights, r)).collect();
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let std = (draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64)
        .sqrt();

    let separation = (sigma_cube - sigma_random).abs();
    assert!(
        separation > std,
        "texture separation {separation:.3} MPa does not exceed realization std {std:.3} MPa"
    );
}

/// Taylor iso-deformation is an upper-bound estimator: on the same 25-grain
/// population the full-field FE flow stress at 1% strain does not exceed the
/// Taylor flow stress.
#[test]
fn taylor_bounds_fem_flow_stress_from_above() {
    use polytex::polycrystal::{run_tension_taylor_detailed, Grain, GrainPopulation};
    use polytex::rvefem::{draw_seeds, run_tension_fem, voxelize_seeded, FemOptions};

    let model = CrystalModel::new(MaterialParams::default()).unwrap();
    let set = TextureComponentSet::default();
    let spec = GrainSizeSpec::default();
    let n_grains = 25;
    let edge = 40.0;

    // one microstructure serves both simulators: seeds and diameters from the
    // tessellation, volume fractions from the voxel counts
    let mut rng = stream_rng(88, "taylor-vs-fem", 0);
    let (seeds, diameters) = draw_seeds(n_grains, edge, &spec, &mut rng);
    let mesh = voxelize_seeded(&seeds, &diameters, 8, edge).unwrap();
    let orientations = polytex::orientations::generate_grain_orientations(
        &set,
        &TextureWeights {
            fractions: [0.0; N_COMPONENTS],
        },
        n_grains,
        &mut rng,
    )
    .unwrap();

    let mut counts = vec![0usize; n_grains];
    for &g in &mesh.grain_ids {
        counts[g] += 1;
    }
    let total = mesh.grain_ids.len() as f64;
    let population = GrainPopulation {
        grains: (0..n_grains)
            .map(|g| Grain {
                orientation: orientations[g],
                volume_fraction: counts[g] as f64 / total,
                diameter: diameters[g],
            })
            .collect(),
    };

    let load = LoadingProgram::to_strain(0.012, 1e-3, 12, 13);
    let taylor = run_tension_taylor_detailed(&population, &model, &load).unwrap();
    let fem = run_tension_fem(&mesh, &model, &orientations, &load, FemOptions::default()).unwrap();

    let taylor_at_1pct = taylor.curve.interpolate(0.01);
    let fem_at_1pct = fem.interpolate(0.01);
    assert!(
        fem_at_1pct <= taylor_at_1pct,
        "FE flow stress {fem_at_1pct:.2} MPa exceeds the Taylor bound {taylor_at_1pct:.2} MPa"
    );
    // and the bound is not vacuous: both are in the plastic regime
    assert!(fem_at_1pct > 100.0);
}
