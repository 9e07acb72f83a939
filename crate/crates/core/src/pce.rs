//! Polynomial chaos surrogate over box-bounded uniform inputs.
//!
//! Inputs are affinely mapped to [-1, 1] and expanded in products of
//! orthonormal Legendre polynomials over a total-degree multi-index set.
//! Coefficients come from least squares via a QR factorization of the design
//! matrix; moments and Sobol sensitivity indices then read directly off the
//! coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PceError {
    #[error("input {index} = {value} outside bounds [{lo}, {hi}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("regression requires more samples than basis terms: M = {m} <= P = {p}")]
    NotEnoughSamples { m: usize, p: usize },
    #[error("design matrix is rank deficient (diagonal ratio {condition:.3e})")]
    RankDeficient { condition: f64 },
    #[error("zero variance at output {output}; Sobol indices undefined")]
    ZeroVariance { output: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid input spec: {0}")]
    InvalidSpec(String),
    #[error("model file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file parse: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Uniformly distributed inputs on a box, in raw (e.g. percent) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSpec {
    /// (min, max) per input.
    pub bounds: Vec<(f64, f64)>,
}

impl InputSpec {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, PceError> {
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi) {
                return Err(PceError::InvalidSpec(format!(
                    "input {i}: min {lo} must be < max {hi}"
                )));
            }
        }
        Ok(Self { bounds })
    }

    pub fn n_inputs(&self) -> usize {
        self.bounds.len()
    }
}

/// Per-input polynomial degrees of one basis term.
pub type MultiIndex = Vec<usize>;

/// Affine map of raw inputs onto the Legendre domain [-1, 1]^n.
pub fn scale_inputs(raw: &[f64], spec: &InputSpec) -> Result<Vec<f64>, PceError> {
    if raw.len() != spec.n_inputs() {
        return Err(PceError::DimensionMismatch {
            expected: spec.n_inputs(),
            got: raw.len(),
        });
    }
    raw.iter()
        .zip(&spec.bounds)
        .enumerate()
        .map(|(index, (&value, &(lo, hi)))| {
            let tol = 1e-9 * (hi - lo).max(1.0);
            if value < lo - tol || value > hi + tol {
                return Err(PceError::OutOfBounds {
                    index,
                    value,
                    lo,
                    hi,
                });
            }
            Ok((2.0 * (value - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
        })
        .collect()
}

/// Orthonormal Legendre values L~_0..L~_max at one point.
///
/// L~_k = sqrt(2k+1) P_k with P_k from the three-term recurrence; the family
/// is orthonormal under the uniform measure on [-1, 1].
fn legendre_orthonormal(x: f64, max_degree: usize) -> Vec<f64> {
    let mut p = vec![0.0; max_degree + 1];
    p[0] = 1.0;
    if max_degree >= 1 {
        p[1] = x;
    }
    for k in 1..max_degree {
        p[k + 1] = ((2 * k + 1) as f64 * x * p[k] - k as f64 * p[k - 1]) / (k + 1) as f64;
    }
    for (k, v) in p.iter_mut().enumerate() {
        *v *= ((2 * k + 1) as f64).sqrt();
    }
    p
}

/// Row of basis evaluations psi_alpha(xi) for the given index set.
pub fn eval_basis(xi: &[f64], indices: &[MultiIndex]) -> Vec<f64> {
    let max_degree = indices
        .iter()
        .flat_map(|mi| mi.iter().copied())
        .max()
        .unwrap_or(0);
    let per_input: Vec<Vec<f64>> = xi
        .iter()
        .map(|&x| legendre_orthonormal(x, max_degree))
        .collect();
    indices
        .iter()
        .map(|mi| {
            mi.iter()
                .enumerate()
                .map(|(k, &deg)| per_input[k][deg])
                .product()
        })
        .collect()
}

/// All multi-indices of total degree <= d in graded lexicographic order.
pub fn total_degree_indices(n_inputs: usize, d: usize) -> Vec<MultiIndex> {
    fn fill(
        remaining: usize,
        dim: usize,
        current: &mut MultiIndex,
        out: &mut Vec<MultiIndex>,
    ) {
        if dim + 1 == current.len() {
            current[dim] = remaining;
            out.push(current.clone());
            return;
        }
        for v in (0..=remaining).rev() {
            current[dim] = v;
            fill(remaining - v, dim + 1, current, out);
        }
    }
    let mut out = Vec::new();
    let mut current = vec![0usize; n_inputs];
    for total in 0..=d {
        fill(total, 0, &mut current, &mut out);
    }
    out
}

/// Fitted surrogate: one coefficient column per strain-grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceModel {
    pub input_spec: InputSpec,
    pub max_degree: usize,
    pub multi_indices: Vec<MultiIndex>,
    /// Strain values the output columns correspond to.
    pub strain_grid: Vec<f64>,
    /// Coefficients, basis-major: `coefficients[basis][output]`.
    pub coefficients: Vec<Vec<f64>>,
    /// Per-output RMS training residual.
    pub training_rmse: Vec<f64>,
    /// Optional input labels for reporting; `x0..xn` when empty.
    #[serde(default)]
    pub input_names: Vec<String>,
}

impl PceModel {
    pub fn n_basis(&self) -> usize {
        self.multi_indices.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.strain_grid.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, PceError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PceError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PceError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Least-squares fit of the coefficient matrix by QR factorization.
///
/// Requires strictly more samples than basis terms. Outputs of every sample
/// must share one strain grid (one output vector length).
pub fn fit(
    samples: &[(Vec<f64>, Vec<f64>)],
    spec: &InputSpec,
    max_degree: usize,
    strain_grid: &[f64],
) -> Result<PceModel, PceError> {
    let indices = total_degree_indices(spec.n_inputs(), max_degree);
    let p = indices.len();
    let m = samples.len();
    if m <= p {
        return Err(PceError::NotEnoughSamples { m, p });
    }
    let n_out = strain_grid.len();
    for (_, outputs) in samples {
        if outputs.len() != n_out {
            return Err(PceError::DimensionMismatch {
                expected: n_out,
                got: outputs.len(),
            });
        }
    }

    let mut design = DMatrix::zeros(m, p);
    for (i, (raw, _)) in samples.iter().enumerate() {
        let xi = scale_inputs(raw, spec)?;
        let row = eval_basis(&xi, &indices);
        for (j, v) in row.into_iter().enumerate() {
            design[(i, j)] = v;
        }
    }

    let qr = design.clone().qr();
    let r = qr.r();
    let mut r_min = f64::INFINITY;
    let mut r_max: f64 = 0.0;
    for j in 0..p {
        let v = r[(j, j)].abs();
        r_min = r_min.min(v);
        r_max = r_max.max(v);
    }
    if r_min <= 1e-12 * r_max {
        return Err(PceError::RankDeficient {
            condition: r_max / r_min.max(f64::MIN_POSITIVE),
        });
    }
    let q = qr.q();

    let mut coefficients = vec![vec![0.0; n_out]; p];
    let mut training_rmse = vec![0.0; n_out];
    for col in 0..n_out {
        let y = DVector::from_fn(m, |i, _| samples[i].1[col]);
        let qty = q.transpose() * &y;
        let u = r
            .solve_upper_triangular(&qty)
            .ok_or(PceError::RankDeficient {
                condition: f64::INFINITY,
            })?;
        let residual = (&design * &u - &y).norm() / (m as f64).sqrt();
        training_rmse[col] = residual;
        for j in 0..p {
            coefficients[j][col] = u[j];
        }
    }

    Ok(PceModel {
        input_spec: spec.clone(),
        max_degree,
        multi_indices: indices,
        strain_grid: strain_grid.to_vec(),
        coefficients,
        training_rmse,
        input_names: Vec::new(),
    })
}

impl PceModel {
    /// Input label for reporting.
    pub fn input_name(&self, k: usize) -> String {
        self.input_names
            .get(k)
            .cloned()
            .unwrap_or_else(|| format!("x{k}"))
    }
}

/// Surrogate prediction at one raw input point.
pub fn predict(model: &PceModel, raw: &[f64]) -> Result<Vec<f64>, PceError> {
    let xi = scale_inputs(raw, &model.input_spec)?;
    let basis = eval_basis(&xi, &model.multi_indices);
    let mut out = vec![0.0; model.n_outputs()];
    for (j, b) in basis.iter().enumerate() {
        for (o, v) in out.iter_mut().enumerate() {
            *v += b * model.coefficients[j][o];
        }
    }
    Ok(out)
}

/// Mean and variance per output, read off the orthonormal coefficients.
pub fn moments(model: &PceModel) -> Vec<(f64, f64)> {
    (0..model.n_outputs())
        .map(|o| {
            let mean = model.coefficients[0][o];
            let variance: f64 = model.coefficients[1..]
                .iter()
                .map(|row| row[o] * row[o])
                .sum();
            (mean, variance)
        })
        .collect()
}

/// First-order and total Sobol indices at one output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolPoint {
    pub first_order: Vec<f64>,
    pub total: Vec<f64>,
}

/// Variance-decomposition sensitivity indices at output `output`.
///
/// Errors when the surrogate variance vanishes there (indices undefined).
pub fn sobol_indices(model: &PceModel, output: usize) -> Result<SobolPoint, PceError> {
    let n = model.input_spec.n_inputs();
    let mean = model.coefficients[0][output];
    let variance: f64 = model.coefficients[1..]
        .iter()
        .map(|row| row[output] * row[output])
        .sum();
    // numerical zero: variance indistinguishable from least-squares roundoff
    if variance <= (1e-12 * (mean.abs() + 1.0)).powi(2) {
        return Err(PceError::ZeroVariance { output });
    }
    let mut first = vec![0.0; n];
    let mut total = vec![0.0; n];
    for (j, mi) in model.multi_indices.iter().enumerate().skip(1) {
        let c2 = model.coefficients[j][output].powi(2);
        let active: Vec<usize> = (0..n).filter(|&k| mi[k] > 0).collect();
        for &k in &active {
            total[k] += c2;
        }
        if active.len() == 1 {
            first[active[0]] += c2;
        }
    }
    for k in 0..n {
        first[k] /= variance;
        total[k] /= variance;
    }
    Ok(SobolPoint {
        first_order: first,
        total,
    })
}

/// Held-out validation metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Per-output root-mean-square prediction error.
    pub rmse: Vec<f64>,
    /// Per-output coefficient of determination. A zero-variance output scores
    /// 1 when predictions are exact and 0 otherwise (a mean-only predictor of
    /// a varying output also scores 0 by this definition).
    pub r2: Vec<f64>,
    pub overall_rmse: f64,
    pub min_r2: f64,
    pub mean_r2: f64,
}

pub fn validate(
    model: &PceModel,
    held_out: &[(Vec<f64>, Vec<f64>)],
) -> Result<ValidationReport, PceError> {
    assert!(held_out.len() >= 2, "need at least 2 held-out samples");
    let n_out = model.n_outputs();
    let m = held_out.len() as f64;

    let predictions: Vec<Vec<f64>> = held_out
        .iter()
        .map(|(raw, _)| predict(model, raw))
        .collect::<Result<_, _>>()?;

    let mut rmse = vec![0.0; n_out];
    let mut r2 = vec![0.0; n_out];
    for o in 0..n_out {
        let mean_obs: f64 = held_out.iter().map(|(_, y)| y[o]).sum::<f64>() / m;
        let ss_res: f64 = held_out
            .iter()
            .zip(&predictions)
            .map(|((_, y), p)| (y[o] - p[o]).powi(2))
            .sum();
        let ss_tot: f64 = held_out.iter().map(|(_, y)| (y[o] - mean_obs).powi(2)).sum();
        rmse[o] = (ss_res / m).sqrt();
        let tiny = 1e-300;
        r2[o] = if ss_tot > tiny {
            1.0 - ss_res / ss_tot
        } else if ss_res <= tiny {
            1.0
        } else {
            0.0
        };
    }
    let overall_rmse = (rmse.iter().map(|v| v * v).sum::<f64>() / n_out as f64).sqrt();
    let min_r2 = r2.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_r2 = r2.iter().sum::<f64>() / n_out as f64;
    Ok(ValidationReport {
        rmse,
        r2,
        overall_rmse,
        min_r2,
        mean_r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::sampling::latin_hypercube;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn unit_spec(n: usize) -> InputSpec {
        InputSpec::new(vec![(-1.0, 1.0); n]).unwrap()
    }

    #[test]
    fn scaling_maps_box_corners_and_midpoint() {
        let spec = InputSpec::new(vec![(2.5, 73.81), (0.0, 10.0)]).unwrap();
        let lo = scale_inputs(&[2.5, 0.0], &spec).unwrap();
        assert_eq!(lo, vec![-1.0, -1.0]);
        let mid = scale_inputs(&[(2.5 + 73.81) / 2.0, 5.0], &spec).unwrap();
        assert!(mid.iter().all(|&v| v.abs() < 1e-12));
        let hi = scale_inputs(&[73.81, 10.0], &spec).unwrap();
        assert_eq!(hi, vec![1.0, 1.0]);
        assert!(matches!(
            scale_inputs(&[80.0, 5.0], &spec),
            Err(PceError::OutOfBounds { index: 0, .. })
        ));
    }

    #[test]
    fn basis_constant_and_linear_endpoint_values() {
        let indices = total_degree_indices(3, 2);
        let psi = eval_basis(&[0.3, -0.7, 0.9], &indices);
        assert_eq!(psi[0], 1.0);
        // degree-1 term of input 0 at xi = 1 evaluates to sqrt(3)
        let e1 = indices
            .iter()
            .position(|mi| mi == &vec![1, 0, 0])
            .unwrap();
        let psi_at_one = eval_basis(&[1.0, 0.0, 0.0], &indices);
        assert_relative_eq!(psi_at_one[e1], 3.0_f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn basis_is_orthonormal_under_monte_carlo() {
        let indices = total_degree_indices(3, 3);
        let p = indices.len();
        let mut rng = stream_rng(11, "orthonormal", 0);
        let n = 1_000_000;
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for _ in 0..n {
            let xi = [
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
            ];
            let row = eval_basis(&xi, &indices);
            for i in 0..p {
                for j in i..p {
                    gram[(i, j)] += row[i] * row[j];
                }
            }
        }
        gram /= n as f64;
        for i in 0..p {
            for j in i..p {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gram[(i, j)] - expect).abs() < 5e-3,
                    "gram[{i},{j}] = {}",
                    gram[(i, j)]
                );
            }
        }
    }

    #[test]
    fn index_counts_match_binomials() {
        assert_eq!(total_degree_indices(8, 2).len(), 45);
        assert_eq!(total_degree_indices(5, 0).len(), 1);
        let one_d = total_degree_indices(1, 3);
        assert_eq!(one_d, vec![vec![0], vec![1], vec![2], vec![3]]);
        // graded order: total degree never decreases
        let indices = total_degree_indices(4, 3);
        let totals: Vec<usize> = indices.iter().map(|mi| mi.iter().sum()).collect();
        assert!(totals.windows(2).all(|w| w[0] <= w[1]));
    }

    fn lhs_samples<F: Fn(&[f64]) -> f64>(
        spec: &InputSpec,
        n: usize,
        seed: u64,
        f: F,
    ) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rng = stream_rng(seed, "pce-fit", 0);
        latin_hypercube(&spec.bounds, n, &mut rng)
            .into_iter()
            .map(|raw| {
                let y = f(&scale_inputs(&raw, spec).unwrap());
                (raw, vec![y])
            })
            .collect()
    }

    #[test]
    fn linear_function_recovers_exact_coefficients() {
        let spec = unit_spec(8);
        let samples = lhs_samples(&spec, 200, 3, |xi| 3.0 + 2.0 * xi[0]);
        let model = fit(&samples, &spec, 2, &[0.0]).unwrap();
        assert_relative_eq!(model.coefficients[0][0], 3.0, max_relative = 1e-12);
        let e1 = model
            .multi_indices
            .iter()
            .position(|mi| mi[0] == 1 && mi.iter().sum::<usize>() == 1)
            .unwrap();
        assert_relative_eq!(
            model.coefficients[e1][0],
            2.0 / 3.0_f64.sqrt(),
            max_relative = 1e-12
        );
        for (j, row) in model.coefficients.iter().enumerate() {
            if j != 0 && j != e1 {
                assert!(row[0].abs() < 1e-10, "coefficient {j} = {}", row[0]);
            }
        }
        // moments: mean 3, variance Var[2 xi_1] = 4/3
        let (mean, var) = moments(&model)[0];
        assert_relative_eq!(mean, 3.0, max_relative = 1e-12);
        assert_relative_eq!(var, 4.0 / 3.0, max_relative = 1e-10);
    }

    #[test]
    fn constant_outputs_fit_to_constant_term_only() {
        let spec = unit_spec(4);
        let samples = lhs_samples(&spec, 40, 4, |_| 7.25);
        let model = fit(&samples, &spec, 2, &[0.0]).unwrap();
        assert_relative_eq!(model.coefficients[0][0], 7.25, max_relative = 1e-13);
        for row in &model.coefficients[1..] {
            assert!(row[0].abs() < 1e-12);
        }
        let (_, var) = moments(&model)[0];
        assert!(var < 1e-24);
        let pred = predict(&model, &[0.3, -0.3, 0.9, 0.0]).unwrap();
        assert_relative_eq!(pred[0], 7.25, max_relative = 1e-12);
    }

    #[test]
    fn paper_shaped_regression_is_solvable() {
        // 8 inputs, degree 2 (45 terms), 160 training rows
        let spec = unit_spec(8);
        let samples = lhs_samples(&spec, 160, 5, |xi| {
            1.0 + xi[0] - 0.5 * xi[1] * xi[1] + 0.25 * xi[2] * xi[7]
        });
        let model = fit(&samples, &spec, 2, &[0.0]).unwrap();
        assert_eq!(model.n_basis(), 45);
        assert!(model.training_rmse[0] < 1e-10);
    }

    #[test]
    fn insufficient_samples_are_rejected() {
        let spec = unit_spec(8);
        let samples = lhs_samples(&spec, 45, 6, |xi| xi[0]);
        assert!(matches!(
            fit(&samples, &spec, 2, &[0.0]),
            Err(PceError::NotEnoughSamples { m: 45, p: 45 })
        ));
    }

    #[test]
    fn duplicated_sample_rows_are_rank_deficient() {
        let spec = unit_spec(2);
        let point = (vec![0.5, -0.5], vec![1.0]);
        let samples = vec![point.clone(); 30];
        assert!(matches!(
            fit(&samples, &spec, 2, &[0.0]),
            Err(PceError::RankDeficient { .. })
        ));
    }

    #[test]
    fn exactly_representable_function_is_interpolated() {
        let spec = unit_spec(3);
        let f = |xi: &[f64]| 0.5 - xi[0] + 2.0 * xi[1] * xi[2] + xi[2] * xi[2];
        let samples = lhs_samples(&spec, 60, 7, f);
        let model = fit(&samples, &spec, 2, &[0.0]).unwrap();
        for (raw, y) in &samples {
            let pred = predict(&model, raw).unwrap();
            assert_relative_eq!(pred[0], y[0], epsilon = 1e-9, max_relative = 1e-9);
        }
        let report = validate(&model, &samples).unwrap();
        assert!(report.min_r2 > 1.0 - 1e-12);
    }

    #[test]
    fn mean_only_model_scores_zero_r2() {
        let spec = unit_spec(2);
        let samples = lhs_samples(&spec, 30, 8, |xi| xi[0]);
        // degree-0 fit can only represent the mean
        let model = fit(&samples, &spec, 0, &[0.0]).unwrap();
        let report = validate(&model, &samples).unwrap();
        assert!(report.r2[0].abs() < 1e-6, "r2 = {}", report.r2[0]);
    }

    #[test]
    fn single_input_function_takes_all_sensitivity() {
        let spec = unit_spec(3);
        let samples = lhs_samples(&spec, 50, 9, |xi| 2.0 * xi[0]);
        let model = fit(&samples, &spec, 2, &[0.0]).unwrap();
        let sobol = sobol_indices(&model, 0).unwrap();
        assert_relative_eq!(sobol.first_order[0], 1.0, max_relative = 1e-9);
        assert_relative_eq!(sobol.total[0], 1.0, max_relative = 1e-9);
        for k in 1..3 {
            assert!(sobol.first_order[k] < 1e-12);
            assert!(sobol.total[k] < 1e-12);
        }
    }

    #[test]
    fn additive_function_splits_sensitivity_evenly() {
        let spec = unit_spec(3);
        let samples = lhs_samples(&spec, 60, 10, |xi| xi[0] + xi[1]);
        let model = fit(&samples, &spec, 2, &[0.0]).unwrap();
        let sobol = sobol_indices(&model, 0).unwrap();
        assert_relative_eq!(sobol.first_order[0], 0.5, max_relative = 1e-9);
        assert_relative_eq!(sobol.first_order[1], 0.5, max_relative = 1e-9);
        assert_relative_eq!(sobol.total[0], sobol.first_order[0], max_relative = 1e-12);
        let sum_first: f64 = sobol.first_order.iter().sum();
        assert_relative_eq!(sum_first, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn zero_variance_sobol_errors() {
        let spec = unit_spec(2);
        let samples = lhs_samples(&spec, 20, 12, |_| 5.0);
        let model = fit(&samples, &spec, 1, &[0.0]).unwrap();
        assert!(matches!(
            sobol_indices(&model, 0),
            Err(PceError::ZeroVariance { output: 0 })
        ));
    }

    /// Ishigami fixture against the closed-form variance decomposition.
    #[test]
    fn ishigami_sobol_indices_match_analytic_values() {
        let a = 7.0;
        let b = 0.1;
        let pi = std::f64::consts::PI;
        let spec = InputSpec::new(vec![(-pi, pi); 3]).unwrap();
        let f = |x: &[f64]| x[0].sin() + a * x[1].sin().powi(2) + b * x[2].powi(4) * x[0].sin();

        let mut rng = stream_rng(13, "ishigami", 0);
        let samples: Vec<(Vec<f64>, Vec<f64>)> = latin_hypercube(&spec.bounds, 2000, &mut rng)
            .into_iter()
            .map(|raw| {
                let y = f(&raw);
                (raw, vec![y])
            })
            .collect();
        let model = fit(&samples, &spec, 9, &[0.0]).unwrap();
        let sobol = sobol_indices(&model, 0).unwrap();

        // closed forms for the Ishigami decomposition: only V1, V2 and the
        // x1-x3 interaction V13 are nonzero
        let v1 = 0.5 * (1.0 + b * pi.powi(4) / 5.0).powi(2);
        let v2 = a * a / 8.0;
        let v13 = 8.0 * b * b * pi.powi(8) / 225.0;
        let v_total = v1 + v2 + v13;
        let s1 = v1 / v_total;
        let s2 = v2 / v_total;
        assert_relative_eq!(s1, 0.3139, max_relative = 2e-4);
        assert_relative_eq!(s2, 0.4424, max_relative = 2e-4);

        assert!((sobol.first_order[0] - s1).abs() < 0.02, "{:?}", sobol.first_order);
        assert!((sobol.first_order[1] - s2).abs() < 0.02, "{:?}", sobol.first_order);
        assert!(sobol.first_order[2].abs() < 0.02);
        // total of input 3 comes entirely from the x1-x3 interaction
        let st3 = v13 / v_total;
        assert!((sobol.total[2] - st3).abs() < 0.02);
    }

    #[test]
    fn model_json_roundtrip_is_bit_exact() {
        let spec = unit_spec(3);
        let samples = lhs_samples(&spec, 40, 14, |xi| xi[0] * xi[1] - 0.25 * xi[2]);
        let model = fit(&samples, &spec, 2, &[0.0, 0.01]).unwrap_err();
        // outputs were length 1 but grid length 2: dimension mismatch
        assert!(matches!(model, PceError::DimensionMismatch { .. }));

        let model = fit(&samples, &spec, 2, &[0.0]).unwrap();
        let json = model.to_json();
        let back = PceModel::from_json(&json).unwrap();
        assert_eq!(model, back);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]
            #[test]
            fn random_quadratics_recover_exactly(seed in 0u64..1000) {
                let spec = unit_spec(4);
                let indices = total_degree_indices(4, 2);
                let mut rng = stream_rng(seed, "prop-quadratic", 0);
                let coeffs: Vec<f64> =
                    (0..indices.len()).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
                let truth = |xi: &[f64]| -> f64 {
                    eval_basis(xi, &indices)
                        .iter()
                        .zip(&coeffs)
                        .map(|(b, c)| b * c)
                        .sum()
                };
                let samples: Vec<(Vec<f64>, Vec<f64>)> =
                    latin_hypercube(&spec.bounds, 2 * indices.len(), &mut rng)
                        .into_iter()
                        .map(|raw| {
                            let y = truth(&scale_inputs(&raw, &spec).unwrap());
                            (raw, vec![y])
                        })
                        .collect();
                let model = fit(&samples, &spec, 2, &[0.0]).unwrap();
                for (j, c) in coeffs.iter().enumerate() {
                    prop_assert!((model.coefficients[j][0] - c).abs() < 1e-8);
                }
                prop_assert!(model.training_rmse[0] < 1e-8);
            }

            #[test]
            fn row_permutation_leaves_coefficients_unchanged(seed in 0u64..1000) {
                let spec = unit_spec(3);
                let mut rng = stream_rng(seed, "prop-permute", 0);
                let samples: Vec<(Vec<f64>, Vec<f64>)> =
                    latin_hypercube(&spec.bounds, 40, &mut rng)
                        .into_iter()
                        .map(|raw| {
                            let xi = scale_inputs(&raw, &spec).unwrap();
                            let y = xi[0].sin() + 0.3 * xi[1] * xi[2];
                            (raw, vec![y])
                        })
                        .collect();
                let model_a = fit(&samples, &spec, 2, &[0.0]).unwrap();
                let mut reversed = samples.clone();
                reversed.reverse();
                let model_b = fit(&reversed, &spec, 2, &[0.0]).unwrap();
                for j in 0..model_a.n_basis() {
                    prop_assert!(
                        (model_a.coefficients[j][0] - model_b.coefficients[j][0]).abs() < 1e-10
                    );
                }
            }
        }
    }

    /// Analytic moments of the surrogate match Monte Carlo over its own inputs.
    #[test]
    fn coefficient_moments_match_monte_carlo() {
        let spec = InputSpec::new(vec![(0.0, 4.0), (-1.0, 3.0)]).unwrap();
        let samples = {
            let mut rng = stream_rng(15, "moment-mc", 0);
            latin_hypercube(&spec.bounds, 60, &mut rng)
                .into_iter()
                .map(|raw| {
                    let y = 2.0 + raw[0] * raw[0] - 0.5 * raw[0] * raw[1];
                    (raw.clone(), vec![y])
                })
                .collect::<Vec<_>>()
        };
        let model = fit(&samples, &spec, 2, &[0.0]).unwrap();
        let (mean, var) = moments(&model)[0];

        let mut rng = stream_rng(16, "moment-mc-draws", 0);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let raw = [rng.gen_range(0.0..4.0), rng.gen_range(-1.0..3.0)];
            let y = predict(&model, &raw).unwrap()[0];
            sum += y;
            sumsq += y * y;
        }
        let mc_mean = sum / n as f64;
        let mc_var = sumsq / n as f64 - mc_mean * mc_mean;
        assert_relative_eq!(mean, mc_mean, max_relative = 0.01);
        assert_relative_eq!(var, mc_var, max_relative = 0.01);
    }
}
