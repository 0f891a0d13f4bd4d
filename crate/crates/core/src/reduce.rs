//! Dimensionality reduction of feature representations before clustering.
//!
//! Three representations are available: the raw features, their leading
//! principal components, and the one-dimensional signed distance to a binary
//! head's decision boundary. The clustering stage fits candidates and picks
//! between them by Silhouette score, so the interface stays pluggable.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{covariance, mean_rows, symmetric_eigen};
use crate::models::Classifier;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReductionKind {
    Identity,
    Pca,
    LossComponent,
}

impl std::fmt::Display for ReductionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReductionKind::Identity => write!(f, "identity"),
            ReductionKind::Pca => write!(f, "pca"),
            ReductionKind::LossComponent => write!(f, "loss_component"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Reduction {
    Identity,
    Pca {
        mean: Array1<f64>,
        /// d x out_dim, orthonormal columns, leading eigenvectors first.
        basis: Array2<f64>,
        /// All eigenvalues of the (1/n) covariance, descending.
        eigenvalues: Vec<f64>,
        out_dim: usize,
        /// Set when out_dim exceeded the numerical rank and the basis was
        /// completed with arbitrary orthonormal directions.
        padded: bool,
    },
    LossComponent {
        /// Unit vector orthogonal to the head's decision boundary.
        direction: Array1<f64>,
        offset: f64,
    },
}

impl Reduction {
    pub fn kind(&self) -> ReductionKind {
        match self {
            Reduction::Identity => ReductionKind::Identity,
            Reduction::Pca { .. } => ReductionKind::Pca,
            Reduction::LossComponent { .. } => ReductionKind::LossComponent,
        }
    }

    pub fn out_dim(&self, input_dim: usize) -> usize {
        match self {
            Reduction::Identity => input_dim,
            Reduction::Pca { out_dim, .. } => *out_dim,
            Reduction::LossComponent { .. } => 1,
        }
    }

    /// Fraction of total variance captured by each kept component.
    pub fn explained_variance_ratio(&self) -> Option<Vec<f64>> {
        match self {
            Reduction::Pca {
                eigenvalues,
                out_dim,
                ..
            } => {
                let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
                if total <= 0.0 {
                    return Some(vec![0.0; *out_dim]);
                }
                Some(
                    eigenvalues[..*out_dim]
                        .iter()
                        .map(|v| v.max(0.0) / total)
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

/// Fit a reduction on a feature matrix. `model` is required only for the
/// loss-component representation, whose state is the model's head direction
/// rather than anything estimated from `features`.
pub fn fit_reduction(
    kind: ReductionKind,
    features: &Array2<f64>,
    out_dim: usize,
    model: Option<&Classifier>,
) -> Result<Reduction> {
    match kind {
        ReductionKind::Identity => Ok(Reduction::Identity),
        ReductionKind::LossComponent => {
            let model = model.ok_or_else(|| {
                Error::invalid("loss_component reduction needs the trained model")
            })?;
            let (dir, offset) = model.binary_head_difference()?;
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1e-300 {
                return Err(Error::undefined(
                    "decision boundary undefined: zero head-weight difference",
                ));
            }
            Ok(Reduction::LossComponent {
                direction: dir / norm,
                offset: offset / norm,
            })
        }
        ReductionKind::Pca => {
            let (n, d) = features.dim();
            if out_dim == 0 || out_dim > d {
                return Err(Error::invalid(format!(
                    "pca out_dim {out_dim} must lie in 1..={d}"
                )));
            }
            if n < out_dim {
                return Err(Error::invalid(format!(
                    "pca needs at least out_dim = {out_dim} samples, got {n}"
                )));
            }
            let mean = mean_rows(&features.view());
            let cov = covariance(&features.view(), &mean.view());
            let (eigenvalues, vectors) = symmetric_eigen(&cov.view())?;
            let scale = eigenvalues.first().cloned().unwrap_or(0.0).max(1e-12);
            let rank = eigenvalues.iter().filter(|&&v| v > 1e-10 * scale).count();
            let padded = out_dim > rank;
            let mut basis = Array2::zeros((d, out_dim));
            for col in 0..out_dim {
                // deterministic sign: largest-magnitude entry positive
                let mut pivot = 0;
                for row in 1..d {
                    if vectors[(row, col)].abs() > vectors[(pivot, col)].abs() {
                        pivot = row;
                    }
                }
                let flip = if vectors[(pivot, col)] < 0.0 { -1.0 } else { 1.0 };
                for row in 0..d {
                    basis[(row, col)] = flip * vectors[(row, col)];
                }
            }
            Ok(Reduction::Pca {
                mean,
                basis,
                eigenvalues,
                out_dim,
                padded,
            })
        }
    }
}

/// Apply a fitted reduction.
pub fn transform(reduction: &Reduction, features: &Array2<f64>) -> Result<Array2<f64>> {
    match reduction {
        Reduction::Identity => Ok(features.clone()),
        Reduction::Pca {
            mean,
            basis,
            out_dim,
            ..
        } => {
            let (n, d) = features.dim();
            if d != mean.len() {
                return Err(Error::dims(format!(
                    "features have dimension {d}, pca was fitted on {}",
                    mean.len()
                )));
            }
            let mut out = Array2::zeros((n, *out_dim));
            for i in 0..n {
                for c in 0..*out_dim {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += (features[(i, j)] - mean[j]) * basis[(j, c)];
                    }
                    out[(i, c)] = acc;
                }
            }
            Ok(out)
        }
        Reduction::LossComponent { direction, offset } => {
            let (n, d) = features.dim();
            if d != direction.len() {
                return Err(Error::dims(format!(
                    "features have dimension {d}, boundary direction has {}",
                    direction.len()
                )));
            }
            let mut out = Array2::zeros((n, 1));
            for i in 0..n {
                let mut acc = *offset;
                for j in 0..d {
                    acc += features[(i, j)] * direction[j];
                }
                out[(i, 0)] = acc;
            }
            Ok(out)
        }
    }
}

/// Map reduced PCA coordinates back to the original space (for residual
/// checks); errors for the other kinds.
pub fn pca_inverse_transform(reduction: &Reduction, reduced: &Array2<f64>) -> Result<Array2<f64>> {
    let Reduction::Pca {
        mean,
        basis,
        out_dim,
        ..
    } = reduction
    else {
        return Err(Error::invalid("inverse transform is only defined for pca"));
    };
    let (n, m) = reduced.dim();
    if m != *out_dim {
        return Err(Error::dims("reduced matrix has wrong number of columns"));
    }
    let d = mean.len();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        for j in 0..d {
            let mut acc = mean[j];
            for c in 0..m {
                acc += reduced[(i, c)] * basis[(j, c)];
            }
            out[(i, j)] = acc;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    fn random_gaussian(n: usize, d: usize, seed: u64) -> Array2<f64> {
        use rand_distr::StandardNormal;
        let mut rng = seeded_rng(seed);
        Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn identity_passes_through() {
        let x = random_gaussian(5, 3, 0);
        let r = fit_reduction(ReductionKind::Identity, &x, 3, None).unwrap();
        assert_eq!(transform(&r, &x).unwrap(), x);
    }

    #[test]
    fn full_rank_two_dimensional_pca_reconstructs_exactly() {
        let x = random_gaussian(200, 2, 1);
        let r = fit_reduction(ReductionKind::Pca, &x, 2, None).unwrap();
        let y = transform(&r, &x).unwrap();
        let back = pca_inverse_transform(&r, &y).unwrap();
        let err: f64 = (&back - &x).iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64;
        assert!(err < 1e-20, "reconstruction error {err}");
    }

    #[test]
    fn line_in_three_dimensions_is_captured_by_one_component() {
        let mut rng = seeded_rng(2);
        let dir = [1.0, -2.0, 0.5];
        let n = 100;
        let mut x = Array2::zeros((n, 3));
        for i in 0..n {
            let t: f64 = rng.random_range(-3.0..3.0);
            for j in 0..3 {
                x[(i, j)] = t * dir[j] + 10.0;
            }
        }
        let r = fit_reduction(ReductionKind::Pca, &x, 1, None).unwrap();
        let ratio = r.explained_variance_ratio().unwrap();
        assert_abs_diff_eq!(ratio[0], 1.0, epsilon = 1e-10);
        if let Reduction::Pca { padded, .. } = &r {
            assert!(!padded);
        }
        let r2 = fit_reduction(ReductionKind::Pca, &x, 2, None).unwrap();
        if let Reduction::Pca { padded, .. } = &r2 {
            assert!(*padded, "rank-1 data with out_dim 2 should be flagged");
        }
    }

    /// Brute-force oracle: project onto eigenvectors of the scatter matrix
    /// computed independently, compare coordinates up to per-axis sign.
    #[test]
    fn projections_match_dense_eigendecomposition_oracle() {
        let x = random_gaussian(300, 50, 3);
        let r = fit_reduction(ReductionKind::Pca, &x, 2, None).unwrap();
        let y = transform(&r, &x).unwrap();

        let mean = mean_rows(&x.view());
        let cov = covariance(&x.view(), &mean.view());
        let (_, vecs) = symmetric_eigen(&cov.view()).unwrap();
        for c in 0..2 {
            // coordinates along the oracle eigenvector
            let mut oracle = vec![0.0; x.nrows()];
            for i in 0..x.nrows() {
                for j in 0..50 {
                    oracle[i] += (x[(i, j)] - mean[j]) * vecs[(j, c)];
                }
            }
            let dot: f64 = (0..x.nrows()).map(|i| oracle[i] * y[(i, c)]).sum();
            let sign = if dot < 0.0 { -1.0 } else { 1.0 };
            for i in 0..x.nrows() {
                assert_abs_diff_eq!(sign * oracle[i], y[(i, c)], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn dropped_variance_equals_reconstruction_error() {
        let x = random_gaussian(400, 5, 4);
        let r = fit_reduction(ReductionKind::Pca, &x, 2, None).unwrap();
        let y = transform(&r, &x).unwrap();
        let back = pca_inverse_transform(&r, &y).unwrap();
        let err: f64 = (&back - &x).iter().map(|v| v * v).sum::<f64>() / x.nrows() as f64;
        let Reduction::Pca { eigenvalues, .. } = &r else {
            unreachable!()
        };
        let dropped: f64 = eigenvalues[2..].iter().sum();
        assert_abs_diff_eq!(err, dropped, epsilon = 1e-8);
    }

    #[test]
    fn pca_is_translation_invariant_up_to_sign() {
        let x = random_gaussian(150, 4, 5);
        let shifted = &x + 7.5;
        let ra = fit_reduction(ReductionKind::Pca, &x, 2, None).unwrap();
        let rb = fit_reduction(ReductionKind::Pca, &shifted, 2, None).unwrap();
        let ya = transform(&ra, &x).unwrap();
        let yb = transform(&rb, &shifted).unwrap();
        for c in 0..2 {
            let dot: f64 = (0..x.nrows()).map(|i| ya[(i, c)] * yb[(i, c)]).sum();
            let sign = if dot < 0.0 { -1.0 } else { 1.0 };
            for i in 0..x.nrows() {
                assert_abs_diff_eq!(ya[(i, c)], sign * yb[(i, c)], epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn loss_component_output_is_one_column() {
        let model = Classifier::binary_linear(&[1.0, 1.0], 0.5);
        let x = random_gaussian(20, 2, 6);
        let r = fit_reduction(ReductionKind::LossComponent, &x, 1, Some(&model)).unwrap();
        let y = transform(&r, &x).unwrap();
        assert_eq!(y.dim(), (20, 1));
        let direct = model.loss_component(&x).unwrap();
        for i in 0..20 {
            assert_abs_diff_eq!(y[(i, 0)], direct[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn pca_transform_rejects_wrong_dims() {
        let x = random_gaussian(30, 3, 7);
        let r = fit_reduction(ReductionKind::Pca, &x, 2, None).unwrap();
        let bad = random_gaussian(5, 4, 8);
        assert!(transform(&r, &bad).is_err());
    }

    #[test]
    fn deterministic_given_input() {
        let x = random_gaussian(100, 6, 9);
        let a = fit_reduction(ReductionKind::Pca, &x, 3, None).unwrap();
        let b = fit_reduction(ReductionKind::Pca, &x, 3, None).unwrap();
        assert_eq!(transform(&a, &x).unwrap(), transform(&b, &x).unwrap());
    }

    #[test]
    fn pca_fixture_matches_hand_computation() {
        // two points on the x-axis: first component along x, eigenvalue 1
        let x = array![[-1.0, 0.0], [1.0, 0.0]];
        let r = fit_reduction(ReductionKind::Pca, &x, 1, None).unwrap();
        let y = transform(&r, &x).unwrap();
        assert_abs_diff_eq!(y[(0, 0)], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(y[(1, 0)], 1.0, epsilon = 1e-12);
    }
}
