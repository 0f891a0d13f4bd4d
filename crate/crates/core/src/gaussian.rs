//! Multivariate Gaussians and finite mixtures.
//!
//! Construction eigendecomposes the covariance once; densities are evaluated
//! in log space through the stored eigenbasis and sampling goes through the
//! PSD factor `Q sqrt(Λ)`, so zero-variance directions are samplable even
//! though their density is undefined.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{logsumexp, symmetric_eigen};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Relative eigenvalue threshold below which a direction counts as degenerate.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawNormal", into = "RawNormal")]
pub struct MultivariateNormal {
    mean: Array1<f64>,
    cov: Array2<f64>,
    eigvals: Vec<f64>,
    eigvecs: Array2<f64>,
    sample_factor: Array2<f64>,
    log_norm: f64,
    full_rank: bool,
}

#[derive(Serialize, Deserialize)]
struct RawNormal {
    mean: Array1<f64>,
    cov: Array2<f64>,
}

impl From<MultivariateNormal> for RawNormal {
    fn from(n: MultivariateNormal) -> Self {
        RawNormal {
            mean: n.mean,
            cov: n.cov,
        }
    }
}

impl TryFrom<RawNormal> for MultivariateNormal {
    type Error = Error;
    fn try_from(raw: RawNormal) -> Result<Self> {
        MultivariateNormal::new(raw.mean, raw.cov)
    }
}

impl MultivariateNormal {
    /// Validates symmetry and positive semidefiniteness (eigenvalues within
    /// a small negative tolerance are clamped to zero).
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::dims(format!(
                "covariance {}x{} does not match mean dimension {}",
                cov.nrows(),
                cov.ncols(),
                d
            )));
        }
        let (mut eigvals, eigvecs) = symmetric_eigen(&cov.view())?;
        let scale = eigvals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for v in eigvals.iter_mut() {
            if *v < -1e-9 * scale {
                return Err(Error::invalid(format!(
                    "covariance is not PSD (eigenvalue {v:.3e})"
                )));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let full_rank = eigvals.iter().all(|&v| v > RANK_TOL * scale);
        let mut sample_factor = eigvecs.clone();
        for (col, &l) in eigvals.iter().enumerate() {
            let s = l.max(0.0).sqrt();
            for row in 0..d {
                sample_factor[(row, col)] *= s;
            }
        }
        let log_norm = if full_rank {
            -0.5 * (d as f64 * LN_2PI + eigvals.iter().map(|v| v.ln()).sum::<f64>())
        } else {
            f64::NEG_INFINITY
        };
        Ok(MultivariateNormal {
            mean,
            cov,
            eigvals,
            eigvecs,
            sample_factor,
            log_norm,
            full_rank,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Array2<f64> {
        &self.cov
    }

    pub fn is_full_rank(&self) -> bool {
        self.full_rank
    }

    /// Smallest covariance eigenvalue (clamped at zero).
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigvals.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Log density; errors when the covariance is singular.
    pub fn log_density(&self, x: &ArrayView1<f64>) -> Result<f64> {
        if !self.full_rank {
            return Err(Error::undefined(
                "density undefined for a singular covariance",
            ));
        }
        if x.len() != self.dim() {
            return Err(Error::dims(format!(
                "point dimension {} vs distribution dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let mut quad = 0.0;
        for (col, &l) in self.eigvals.iter().enumerate() {
            let mut proj = 0.0;
            for row in 0..self.dim() {
                proj += self.eigvecs[(row, col)] * (x[row] - self.mean[row]);
            }
            quad += proj * proj / l;
        }
        Ok(self.log_norm - 0.5 * quad)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let d = self.dim();
        let noise: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = self.mean.clone();
        for row in 0..d {
            for col in 0..d {
                out[row] += self.sample_factor[(row, col)] * noise[col];
            }
        }
        out
    }
}

/// Convex combination of Gaussians.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<MultivariateNormal>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<MultivariateNormal>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::invalid(
                "mixture needs matching nonempty weights and components",
            ));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        let d = components[0].dim();
        if components.iter().any(|c| c.dim() != d) {
            return Err(Error::dims("mixture components differ in dimension"));
        }
        Ok(GaussianMixture {
            weights,
            components,
        })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[MultivariateNormal] {
        &self.components
    }

    /// Log densities of each component at `x` (without mixture weights).
    pub fn component_log_densities(&self, x: &ArrayView1<f64>) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.log_density(x)).collect()
    }

    /// log p(x) = logsumexp_j (ln w_j + ln N_j(x)).
    pub fn log_density(&self, x: &ArrayView1<f64>) -> Result<f64> {
        let logs: Vec<f64> = self
            .components
            .iter()
            .zip(self.weights.iter())
            .map(|(c, &w)| {
                c.log_density(x)
                    .map(|l| if w > 0.0 { w.ln() + l } else { f64::NEG_INFINITY })
            })
            .collect::<Result<_>>()?;
        Ok(logsumexp(&logs))
    }

    /// Draw one point: pick a component by weight, then sample it.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut idx = self.components.len() - 1;
        for (j, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                idx = j;
                break;
            }
        }
        self.components[idx].sample(rng)
    }
}

/// A distribution that can be both sampled and evaluated, as needed by the
/// Monte-Carlo total-variation estimator.
pub trait SampleDensity {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &ArrayView1<f64>) -> Result<f64>;
    fn sample(&self, rng: &mut ChaCha8Rng) -> Array1<f64>;
}

impl SampleDensity for MultivariateNormal {
    fn dim(&self) -> usize {
        MultivariateNormal::dim(self)
    }
    fn log_density(&self, x: &ArrayView1<f64>) -> Result<f64> {
        MultivariateNormal::log_density(self, x)
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        MultivariateNormal::sample(self, rng)
    }
}

impl SampleDensity for GaussianMixture {
    fn dim(&self) -> usize {
        GaussianMixture::dim(self)
    }
    fn log_density(&self, x: &ArrayView1<f64>) -> Result<f64> {
        GaussianMixture::log_density(self, x)
    }
    fn sample(&self, rng: &mut ChaCha8Rng) -> Array1<f64> {
        GaussianMixture::sample(self, rng)
    }
}
