//! Per-superclass clustering with automatic cluster-count selection.
//!
//! The fitting path is: reduce features, search (method, k) candidates by
//! mean per-cluster Silhouette score, then overcluster the winner to surface
//! small clusters the global search missed. Both k-means and full-covariance
//! GMM clustering are always evaluated.

mod gmm;
mod kmeans;
mod pipeline;
mod silhouette;

pub use gmm::{gmm_em, GmmFit};
pub use kmeans::{kmeans, KMeansFit};
pub use pipeline::{
    assign, cluster_superclasses, overcluster, ClusterConfig, ClusterUnit, Clustering,
    SuperclassClustering, SuperclassClusters,
};
pub(crate) use pipeline::select_rows;
pub use silhouette::{silhouette, SilhouetteScore};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianMixture;
use crate::linalg::sq_distance;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    KMeans,
    Gmm,
}

impl std::fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClusterMethod::KMeans => write!(f, "kmeans"),
            ClusterMethod::Gmm => write!(f, "gmm"),
        }
    }
}

/// A fitted flat clustering of one point set.
#[derive(Debug, Clone)]
pub enum ClusterModel {
    KMeans {
        /// k x d centroid matrix.
        centroids: Array2<f64>,
    },
    Gmm(GaussianMixture),
}

impl ClusterModel {
    pub fn method(&self) -> ClusterMethod {
        match self {
            ClusterModel::KMeans { .. } => ClusterMethod::KMeans,
            ClusterModel::Gmm(_) => ClusterMethod::Gmm,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            ClusterModel::KMeans { centroids } => centroids.nrows(),
            ClusterModel::Gmm(m) => m.k(),
        }
    }

    /// Hard assignment of one point; ties resolve to the lowest index.
    pub fn assign_one(&self, x: &ArrayView1<f64>) -> Result<usize> {
        match self {
            ClusterModel::KMeans { centroids } => {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, row) in centroids.rows().into_iter().enumerate() {
                    let d = sq_distance(x, &row);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                Ok(best)
            }
            ClusterModel::Gmm(mixture) => {
                let logs = mixture.component_log_densities(x)?;
                let mut best = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for (c, (&l, &w)) in logs.iter().zip(mixture.weights().iter()).enumerate() {
                    let v = if w > 0.0 { w.ln() + l } else { f64::NEG_INFINITY };
                    if v > best_v {
                        best_v = v;
                        best = c;
                    }
                }
                Ok(best)
            }
        }
    }

    pub fn assign_rows(&self, points: &ArrayView2<f64>) -> Result<Vec<usize>> {
        points.rows().into_iter().map(|r| self.assign_one(&r)).collect()
    }
}

/// Outcome of the (method, k) search.
#[derive(Debug, Clone)]
pub struct AutoClusterOutcome {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    pub score: SilhouetteScore,
}

fn fit_candidate(
    points: &ArrayView2<f64>,
    method: ClusterMethod,
    k: usize,
    seed: u64,
) -> Result<ClusterModel> {
    match method {
        ClusterMethod::KMeans => Ok(kmeans(points, k, seed)?.model),
        ClusterMethod::Gmm => Ok(ClusterModel::Gmm(gmm_em(points, k, seed)?.mixture)),
    }
}

/// Fit every `(method, k)` candidate and keep the one with the highest mean
/// per-cluster Silhouette score. Ties break to the smaller k, then to the
/// earlier method in `methods` (k-means before GMM in the default order).
/// Candidates that fail to fit are skipped; every candidate failing is an
/// error.
pub fn auto_cluster(
    points: &ArrayView2<f64>,
    k_range: (usize, usize),
    methods: &[ClusterMethod],
    cap: usize,
    seed: u64,
) -> Result<AutoClusterOutcome> {
    let (k_min, k_max) = k_range;
    if k_min < 1 || k_max < k_min {
        return Err(Error::invalid("bad k range"));
    }
    if methods.is_empty() {
        return Err(Error::invalid("no clustering methods requested"));
    }
    let n = points.nrows();
    let mut candidates = Vec::new();
    for k in k_min..=k_max {
        if k > n {
            continue;
        }
        for (mi, &method) in methods.iter().enumerate() {
            candidates.push((k, method, derive_seed(seed, (k * 8 + mi) as u64)));
        }
    }
    let fits: Vec<Option<AutoClusterOutcome>> = candidates
        .par_iter()
        .map(|&(k, method, cand_seed)| {
            let model = fit_candidate(points, method, k, cand_seed).ok()?;
            let assignments = model.assign_rows(points).ok()?;
            // a component that captured no points invalidates the candidate
            let score = silhouette(points, &assignments, cap).ok()?;
            Some(AutoClusterOutcome {
                model,
                assignments,
                score,
            })
        })
        .collect();
    let mut best: Option<AutoClusterOutcome> = None;
    for outcome in fits.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some(b) => outcome.score.mean > b.score.mean,
        };
        if better {
            best = Some(outcome);
        }
    }
    best.ok_or_else(|| Error::numerical("every clustering candidate failed to fit"))
}
