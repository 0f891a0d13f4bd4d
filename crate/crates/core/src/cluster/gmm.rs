//! Expectation-maximization for full-covariance Gaussian mixtures.
//!
//! Responsibilities are computed in log space; every M-step adds 1e-6 to the
//! covariance diagonal. A run whose covariances still collapse (smallest
//! eigenvalue below 1e-12) restarts with a fresh seed, up to five times.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianMixture, MultivariateNormal};
use crate::linalg::logsumexp;
use crate::rng::seeded_rng;

use super::kmeans::plus_plus_indices;

const MAX_ITERS: usize = 500;
const LL_TOL: f64 = 1e-7;
const COV_REG: f64 = 1e-6;
const COLLAPSE_EIGENVALUE: f64 = 1e-12;
const MAX_RESTARTS: usize = 5;

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Mean per-point log-likelihood after each EM iteration.
    pub log_likelihood: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
}

/// EM with k-means++ initialized means. Stops when the mean log-likelihood
/// improves by less than 1e-7 or after 500 iterations.
pub fn gmm_em(points: &ArrayView2<f64>, k: usize, seed: u64) -> Result<GmmFit> {
    let (n, _) = points.dim();
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "{n} points cannot support {k} mixture components"
        )));
    }
    let mut last_err = None;
    for restart in 0..=MAX_RESTARTS {
        match run_em(points, k, seed.wrapping_add(restart as u64)) {
            Ok(fit) => return Ok(fit),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::numerical("EM failed")))
}

fn run_em(points: &ArrayView2<f64>, k: usize, seed: u64) -> Result<GmmFit> {
    let (n, d) = points.dim();
    let mut rng = seeded_rng(seed);
    let seeds = plus_plus_indices(points, k, &mut rng);

    // shared initial covariance: data covariance plus regularization
    let global_mean = crate::linalg::mean_rows(points);
    let mut init_cov = crate::linalg::covariance(points, &global_mean.view());
    for j in 0..d {
        init_cov[(j, j)] += COV_REG;
    }

    let mut weights = vec![1.0 / k as f64; k];
    let mut comps: Vec<MultivariateNormal> = seeds
        .iter()
        .map(|&i| MultivariateNormal::new(points.row(i).to_owned(), init_cov.clone()))
        .collect::<Result<_>>()?;

    let mut log_resp = Array2::<f64>::zeros((n, k));
    let mut trajectory = Vec::new();
    let mut converged = false;
    let mut n_iter = 0;

    for iter in 0..MAX_ITERS {
        n_iter = iter + 1;
        // E-step
        let mut ll_total = 0.0;
        let mut row_logs = vec![0.0; k];
        for i in 0..n {
            let x = points.row(i);
            for (j, comp) in comps.iter().enumerate() {
                let lw = if weights[j] > 0.0 {
                    weights[j].ln()
                } else {
                    f64::NEG_INFINITY
                };
                row_logs[j] = lw + comp.log_density(&x)?;
            }
            let norm = logsumexp(&row_logs);
            ll_total += norm;
            for j in 0..k {
                log_resp[(i, j)] = row_logs[j] - norm;
            }
        }
        let ll = ll_total / n as f64;
        trajectory.push(ll);

        // M-step
        let mut new_weights = vec![0.0; k];
        let mut means = vec![Array1::<f64>::zeros(d); k];
        for j in 0..k {
            let mut nj = 0.0;
            for i in 0..n {
                let r = log_resp[(i, j)].exp();
                nj += r;
                for a in 0..d {
                    means[j][a] += r * points[(i, a)];
                }
            }
            if nj < 1e-10 {
                return Err(Error::numerical(format!(
                    "mixture component {j} collapsed to zero responsibility"
                )));
            }
            for a in 0..d {
                means[j][a] /= nj;
            }
            new_weights[j] = nj / n as f64;
        }
        let mut new_comps = Vec::with_capacity(k);
        for j in 0..k {
            let mut cov = Array2::<f64>::zeros((d, d));
            let mut nj = 0.0;
            for i in 0..n {
                let r = log_resp[(i, j)].exp();
                nj += r;
                for a in 0..d {
                    let da = points[(i, a)] - means[j][a];
                    for b in a..d {
                        cov[(a, b)] += r * da * (points[(i, b)] - means[j][b]);
                    }
                }
            }
            for a in 0..d {
                for b in a..d {
                    let v = cov[(a, b)] / nj;
                    cov[(a, b)] = v;
                    cov[(b, a)] = v;
                }
                cov[(a, a)] += COV_REG;
            }
            let comp = MultivariateNormal::new(means[j].clone(), cov)?;
            if comp.min_eigenvalue() < COLLAPSE_EIGENVALUE {
                return Err(Error::numerical(format!(
                    "mixture component {j} collapsed numerically"
                )));
            }
            new_comps.push(comp);
        }
        weights = new_weights;
        comps = new_comps;

        if trajectory.len() >= 2 {
            let prev = trajectory[trajectory.len() - 2];
            if (ll - prev).abs() < LL_TOL {
                converged = true;
                break;
            }
        }
    }
    let mixture = GaussianMixture::new(weights, comps)?;
    Ok(GmmFit {
        mixture,
        log_likelihood: trajectory,
        n_iter,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{covariance, mean_rows};
    use crate::rng::seeded_rng;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_points(mean: [f64; 2], scale: f64, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = seeded_rng(seed);
        Array2::from_shape_fn((n, 2), |(_, j)| {
            mean[j] + scale * rng.sample::<f64, _>(StandardNormal)
        })
    }

    #[test]
    fn single_component_recovers_sample_moments() {
        let points = gaussian_points([1.0, -2.0], 1.3, 400, 0);
        let fit = gmm_em(&points.view(), 1, 0).unwrap();
        let mean = mean_rows(&points.view());
        let cov = covariance(&points.view(), &mean.view());
        let comp = &fit.mixture.components()[0];
        for j in 0..2 {
            assert_abs_diff_eq!(comp.mean()[j], mean[j], epsilon = 1e-10);
        }
        // the fitted covariance carries the documented 1e-6 diagonal regularizer
        for a in 0..2 {
            for b in 0..2 {
                let reg = if a == b { COV_REG } else { 0.0 };
                assert_abs_diff_eq!(comp.cov()[(a, b)], cov[(a, b)] + reg, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn well_separated_pair_is_recovered() {
        // two unit-variance components 10 sigma apart
        let mut rng = seeded_rng(5);
        let n = 1000;
        let mut points = Array2::zeros((n, 2));
        for i in 0..n {
            let c = if rng.random::<f64>() < 0.5 { 0.0 } else { 10.0 };
            for j in 0..2 {
                points[(i, j)] = c + rng.sample::<f64, _>(StandardNormal);
            }
        }
        let fit = gmm_em(&points.view(), 2, 1).unwrap();
        let mut means: Vec<f64> = fit
            .mixture
            .components()
            .iter()
            .map(|c| c.mean()[0])
            .collect();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((means[0] - 0.0).abs() < 0.05 * 10.0_f64.sqrt());
        assert!((means[1] - 10.0).abs() < 0.05 * 10.0_f64.sqrt());
    }

    #[test]
    fn log_likelihood_never_decreases() {
        let points = gaussian_points([0.0, 0.0], 2.0, 300, 9);
        let fit = gmm_em(&points.view(), 3, 2).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9,
                "log-likelihood dropped from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn weights_stay_on_the_simplex() {
        let points = gaussian_points([0.0, 0.0], 1.0, 200, 4);
        let fit = gmm_em(&points.view(), 4, 3).unwrap();
        let total: f64 = fit.mixture.weights().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
        assert!(fit.mixture.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn more_components_than_points_is_an_error() {
        let points = gaussian_points([0.0, 0.0], 1.0, 3, 4);
        assert!(gmm_em(&points.view(), 5, 0).is_err());
    }
}
