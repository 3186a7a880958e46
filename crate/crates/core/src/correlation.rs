//! Hierarchical Gaussian dependence among components: loading coefficients
//! onto shared standard-normal hyperparameters, conditional initial crack
//! beliefs via the Nataf construction, and correlated initial-state sampling.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::discretization::StateGrids;
use crate::error::{Error, Result};
use crate::rng::derived_rng;

/// Guard on the total loaded variance; a component with `sum(lambda^2) = 1`
/// would have a degenerate conditional distribution.
const MAX_LOADED_VARIANCE: f64 = 1.0 - 1e-8;

/// Target correlation structure among components.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CorrelationMode {
    /// Independent components.
    None,
    /// All pairs share the same correlation coefficient.
    Equal { rho: f64 },
    /// Arbitrary symmetric target matrix with unit diagonal.
    General { matrix: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CorrelationSpec {
    #[serde(flatten)]
    pub mode: CorrelationMode,
    /// Number of shared hyperparameters (0 for independence).
    pub n_hyper: usize,
    /// Discretization states per hyperparameter.
    pub n_alpha_states: usize,
}

impl CorrelationSpec {
    pub fn independent() -> Self {
        CorrelationSpec { mode: CorrelationMode::None, n_hyper: 0, n_alpha_states: 1 }
    }

    pub fn equal(rho: f64, n_alpha_states: usize) -> Self {
        CorrelationSpec { mode: CorrelationMode::Equal { rho }, n_hyper: 1, n_alpha_states }
    }

    pub fn validate(&self, n_components: usize) -> Result<()> {
        match &self.mode {
            CorrelationMode::None => Ok(()),
            CorrelationMode::Equal { rho } => {
                if !(0.0..1.0).contains(rho) {
                    return Err(Error::InvalidArgument(format!(
                        "equal correlation must lie in [0, 1), got {rho}"
                    )));
                }
                if self.n_hyper < 1 {
                    return Err(Error::InvalidArgument(
                        "equal correlation requires at least one hyperparameter".into(),
                    ));
                }
                Ok(())
            }
            CorrelationMode::General { matrix } => {
                if matrix.len() != n_components {
                    return Err(Error::ShapeMismatch(format!(
                        "correlation matrix has {} rows for {} components",
                        matrix.len(),
                        n_components
                    )));
                }
                for (i, row) in matrix.iter().enumerate() {
                    if row.len() != n_components {
                        return Err(Error::ShapeMismatch("correlation matrix must be square".into()));
                    }
                    for (j, &v) in row.iter().enumerate() {
                        if v.is_nan() {
                            return Err(Error::NonFinite("correlation matrix".into()));
                        }
                        if !( -1.0..=1.0).contains(&v) {
                            return Err(Error::InvalidArgument(format!(
                                "correlation entry ({i},{j}) out of [-1, 1]: {v}"
                            )));
                        }
                        if (v - matrix[j][i]).abs() > 1e-12 {
                            return Err(Error::InvalidArgument("correlation matrix must be symmetric".into()));
                        }
                    }
                    if (row[i] - 1.0).abs() > 1e-12 {
                        return Err(Error::InvalidArgument("correlation matrix diagonal must be 1".into()));
                    }
                }
                if self.n_hyper < 1 {
                    return Err(Error::InvalidArgument(
                        "general correlation requires at least one hyperparameter".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Fitted loading coefficients plus the shared hyperparameter grid.
///
/// Pairwise Gaussian-space correlation is reconstructed as the inner product
/// of the loading rows; `fit_residual` is the largest absolute reconstruction
/// error over all pairs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CorrelationStructure {
    /// `lambda[i][k]`: loading of component `i` onto hyperparameter `k`.
    pub lambda: Vec<Vec<f64>>,
    pub n_hyper: usize,
    pub n_alpha_states: usize,
    /// Representative point (bin median) per hyperparameter state.
    pub alpha_points: Vec<f64>,
    /// Standard-normal interval edges of the hyperparameter states; the
    /// outermost edges are infinite.
    #[serde(with = "crate::discretization::edge_serde")]
    pub alpha_edges: Vec<f64>,
    pub fit_residual: f64,
}

impl CorrelationStructure {
    pub fn n_components(&self) -> usize {
        self.lambda.len()
    }

    /// Number of joint hyperparameter grid cells.
    pub fn cell_count(&self) -> usize {
        if self.n_hyper == 0 {
            1
        } else {
            self.n_alpha_states.pow(self.n_hyper as u32)
        }
    }

    /// Representative hyperparameter values of a joint grid cell.
    pub fn cell_alpha(&self, cell: usize) -> Vec<f64> {
        let mut vals = Vec::with_capacity(self.n_hyper);
        let mut rest = cell;
        for _ in 0..self.n_hyper {
            vals.push(self.alpha_points[rest % self.n_alpha_states]);
            rest /= self.n_alpha_states;
        }
        vals
    }

    /// True when no component carries any loading.
    pub fn is_independent(&self) -> bool {
        self.n_hyper == 0 || self.lambda.iter().all(|row| row.iter().all(|&l| l == 0.0))
    }

    /// Reconstructed pairwise correlation between components `i` and `j`.
    pub fn reconstructed_rho(&self, i: usize, j: usize) -> f64 {
        self.lambda[i].iter().zip(&self.lambda[j]).map(|(a, b)| a * b).sum()
    }

    fn loaded_variance(&self, component: usize) -> f64 {
        self.lambda[component].iter().map(|l| l * l).sum::<f64>().min(MAX_LOADED_VARIANCE)
    }
}

/// Equal-probability quantile bins of the standard normal, represented by
/// their bin medians, so the uniform hyperparameter prior is exact.
fn quantile_grid(n_states: usize) -> (Vec<f64>, Vec<f64>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut edges = Vec::with_capacity(n_states + 1);
    edges.push(f64::NEG_INFINITY);
    for i in 1..n_states {
        edges.push(normal.inverse_cdf(i as f64 / n_states as f64));
    }
    edges.push(f64::INFINITY);
    let points = (0..n_states)
        .map(|i| normal.inverse_cdf((i as f64 + 0.5) / n_states as f64))
        .collect();
    (points, edges)
}

fn residual(lambda: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let n = lambda.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let rec: f64 = lambda[i].iter().zip(&lambda[j]).map(|(a, b)| a * b).sum();
            worst = worst.max((rec - target[i][j]).abs());
        }
    }
    worst
}

fn least_squares_objective(lambda: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let n = lambda.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let rec: f64 = lambda[i].iter().zip(&lambda[j]).map(|(a, b)| a * b).sum();
            acc += (rec - target[i][j]).powi(2);
        }
    }
    acc
}

/// Projected gradient descent on the pairwise least-squares objective with
/// multi-start; each component row is projected back onto the unit ball.
fn fit_general(target: &[Vec<f64>], n_hyper: usize, n_states: usize, seed: u64) -> CorrelationStructure {
    let n = target.len();
    let starts = 16;
    let max_iters = 100_000;
    let tol = 1e-10;

    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for start in 0..starts {
        let mut rng = derived_rng(seed, &[0x6c61, start as u64]);
        let mut lambda: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n_hyper).map(|_| rng.random::<f64>() - 0.5).collect())
            .collect();
        let mut step = 0.1;
        let mut obj = least_squares_objective(&lambda, target);
        for _ in 0..max_iters {
            // gradient of sum_{i<j} (lambda_i . lambda_j - rho_ij)^2
            let mut grad = vec![vec![0.0; n_hyper]; n];
            for i in 0..n {
                for j in (i + 1)..n {
                    let rec: f64 = lambda[i].iter().zip(&lambda[j]).map(|(a, b)| a * b).sum();
                    let e = 2.0 * (rec - target[i][j]);
                    for k in 0..n_hyper {
                        grad[i][k] += e * lambda[j][k];
                        grad[j][k] += e * lambda[i][k];
                    }
                }
            }
            let gnorm: f64 = grad.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm < tol {
                break;
            }
            // backtracking line search with ball projection
            let mut accepted = false;
            for _ in 0..40 {
                let mut cand = lambda.clone();
                for i in 0..n {
                    for k in 0..n_hyper {
                        cand[i][k] -= step * grad[i][k];
                    }
                    let norm2: f64 = cand[i].iter().map(|l| l * l).sum();
                    if norm2 > 1.0 {
                        let scale = (1.0 / norm2).sqrt();
                        for v in cand[i].iter_mut() {
                            *v *= scale;
                        }
                    }
                }
                let cand_obj = least_squares_objective(&cand, target);
                if cand_obj < obj {
                    lambda = cand;
                    obj = cand_obj;
                    step *= 1.2;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, lambda));
        }
    }
    let (_, lambda) = best.unwrap();
    let fit_residual = residual(&lambda, target);
    let (alpha_points, alpha_edges) = quantile_grid(n_states);
    CorrelationStructure {
        lambda,
        n_hyper,
        n_alpha_states: n_states,
        alpha_points,
        alpha_edges,
        fit_residual,
    }
}

/// Fits loading coefficients to the requested correlation target.
///
/// The equal case is closed-form (`lambda = sqrt(rho)` for every component);
/// the general case runs a seeded multi-start projected gradient descent and
/// reports the achieved residual rather than failing on infeasible targets.
pub fn fit_loadings(spec: &CorrelationSpec, n_components: usize, seed: u64) -> Result<CorrelationStructure> {
    spec.validate(n_components)?;
    match &spec.mode {
        CorrelationMode::None => {
            let (alpha_points, alpha_edges) = quantile_grid(spec.n_alpha_states.max(1));
            Ok(CorrelationStructure {
                lambda: vec![vec![]; n_components],
                n_hyper: 0,
                n_alpha_states: spec.n_alpha_states.max(1),
                alpha_points,
                alpha_edges,
                fit_residual: 0.0,
            })
        }
        CorrelationMode::Equal { rho } => {
            let l = rho.sqrt();
            let mut lambda = vec![vec![0.0; spec.n_hyper]; n_components];
            for row in lambda.iter_mut() {
                row[0] = l;
            }
            let (alpha_points, alpha_edges) = quantile_grid(spec.n_alpha_states);
            Ok(CorrelationStructure {
                lambda,
                n_hyper: spec.n_hyper,
                n_alpha_states: spec.n_alpha_states,
                alpha_points,
                alpha_edges,
                fit_residual: 0.0,
            })
        }
        CorrelationMode::General { matrix } => {
            Ok(fit_general(matrix, spec.n_hyper, spec.n_alpha_states, seed))
        }
    }
}

/// Initial crack beliefs conditional on each hyperparameter grid cell, plus
/// the uniform hyperparameter prior.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ConditionalPrior {
    /// `b0_cond[component][cell][bin]`.
    pub b0_cond: Vec<Vec<Vec<f64>>>,
    /// Uniform prior over joint hyperparameter cells.
    pub hyper_prior: Vec<f64>,
}

/// Crack bin probabilities conditional on a continuous hyperparameter value,
/// for one loading row. Used both for the discretized prior and by oracle
/// tests that integrate over a fine quadrature.
pub fn conditional_crack_probs(
    lambda_row: &[f64],
    alpha: &[f64],
    grids: &StateGrids,
    d0_mean: f64,
) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let loaded: f64 = lambda_row.iter().map(|l| l * l).sum::<f64>().min(MAX_LOADED_VARIANCE);
    let shift: f64 = lambda_row.iter().zip(alpha).map(|(l, a)| l * a).sum();
    let sd = (1.0 - loaded).sqrt();
    let cdf_at = |d: f64| -> f64 {
        if d <= 0.0 {
            return 0.0;
        }
        if d.is_infinite() {
            return 1.0;
        }
        let f = 1.0 - (-d / d0_mean).exp();
        if f <= 0.0 {
            return 0.0;
        }
        if f >= 1.0 {
            return 1.0;
        }
        let z = normal.inverse_cdf(f);
        normal.cdf((z - shift) / sd)
    };
    let mut probs = Vec::with_capacity(grids.n_crack);
    let mut prev = cdf_at(grids.crack_edges[0]);
    for i in 0..grids.n_crack {
        let next = cdf_at(grids.crack_edges[i + 1]);
        probs.push((next - prev).max(0.0));
        prev = next;
    }
    let sum: f64 = probs.iter().sum();
    if sum > 0.0 {
        for p in probs.iter_mut() {
            *p /= sum;
        }
    }
    probs
}

/// Builds conditional initial beliefs for every component and joint cell.
pub fn conditional_initial_belief(
    structure: &CorrelationStructure,
    grids: &StateGrids,
    d0_mean: f64,
) -> ConditionalPrior {
    let cells = structure.cell_count();
    let b0_cond = (0..structure.n_components())
        .map(|c| {
            (0..cells)
                .map(|cell| {
                    let alpha = structure.cell_alpha(cell);
                    conditional_crack_probs(&structure.lambda[c], &alpha, grids, d0_mean)
                })
                .collect()
        })
        .collect();
    ConditionalPrior { b0_cond, hyper_prior: vec![1.0 / cells as f64; cells] }
}

/// Samples hyperparameters and correlated initial crack depths.
///
/// Returns one hyperparameter vector and one crack-depth vector per sample.
pub fn sample_initial_state<R: Rng>(
    structure: &CorrelationStructure,
    d0_mean: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let alphas: Vec<f64> = (0..structure.n_hyper)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    let cracks = (0..structure.n_components())
        .map(|i| {
            let x: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
            let loaded = structure.loaded_variance(i);
            let shift: f64 = structure.lambda[i].iter().zip(&alphas).map(|(l, a)| l * a).sum();
            let y = (1.0 - loaded).sqrt() * x + shift;
            let u = normal.cdf(y).clamp(1e-300, 1.0 - 1e-16);
            -d0_mean * (1.0 - u).ln()
        })
        .collect();
    (alphas, cracks)
}

/// Matrix of correlated initial crack depths (`n_samples` by `n_components`).
pub fn sample_correlated_d0(
    structure: &CorrelationStructure,
    d0_mean: f64,
    n_samples: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = derived_rng(seed, &[0xd0]);
    (0..n_samples)
        .map(|_| sample_initial_state(structure, d0_mean, &mut rng).1)
        .collect()
}
