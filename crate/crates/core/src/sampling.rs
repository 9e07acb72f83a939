//! Space-filling experiment designs.

use rand::Rng;

/// Latin-hypercube sample of a box: each dimension is split into `n_samples`
/// equal strata holding exactly one draw, with strata assigned by a seeded
/// shuffle. Closed box; deterministic for a fixed RNG stream.
pub fn latin_hypercube<R: Rng + ?Sized>(
    ranges: &[(f64, f64)],
    n_samples: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut samples = vec![vec![0.0; ranges.len()]; n_samples];
    for (dim, &(lo, hi)) in ranges.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n_samples).collect();
        for i in (1..n_samples).rev() {
            let j = rng.gen_range(0..=i);
            strata.swap(i, j);
        }
        for (i, sample) in samples.iter_mut().enumerate() {
            let u: f64 = rng.gen();
            sample[dim] = lo + (strata[i] as f64 + u) / n_samples as f64 * (hi - lo);
        }
    }
    samples
}
