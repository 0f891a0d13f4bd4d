//! Per-superclass clustering pipeline and out-of-sample assignment.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::MultivariateNormal;
use crate::linalg::{covariance, mean_rows, sq_distance};
use crate::models::Classifier;
use crate::reduce::{fit_reduction, transform, Reduction, ReductionKind};
use crate::rng::derive_seed;
use crate::synthgen::Dataset;

use super::{auto_cluster, silhouette, ClusterMethod, ClusterModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub methods: Vec<ClusterMethod>,
    /// Overclustering factor F: each selected cluster is split this many ways.
    pub overcluster_factor: usize,
    /// Minimum promoted-cluster size; default max(20, ceil(0.01 n_b)).
    pub s_min: Option<usize>,
    /// Silhouette subsample cap.
    pub silhouette_cap: usize,
    /// PCA output dimension for the reduced representation.
    pub pca_dim: usize,
    /// Also evaluate the 1-d signed-distance representation on binary tasks.
    pub use_loss_component: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            k_min: 2,
            k_max: 10,
            methods: vec![ClusterMethod::KMeans, ClusterMethod::Gmm],
            overcluster_factor: 5,
            s_min: None,
            silhouette_cap: 2000,
            pca_dim: 2,
            use_loss_component: true,
        }
    }
}

impl ClusterConfig {
    pub fn s_min_for(&self, n_b: usize) -> usize {
        self.s_min
            .unwrap_or_else(|| 20.max((0.01 * n_b as f64).ceil() as usize))
    }
}

/// One final cluster, with enough state to assign new points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterUnit {
    pub weight: f64,
    pub mean: Array1<f64>,
    /// Present for GMM clusterings.
    pub cov: Option<Array2<f64>>,
    pub size: usize,
}

/// Final clustering of one superclass's (reduced) points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperclassClusters {
    pub method: ClusterMethod,
    pub units: Vec<ClusterUnit>,
    /// Local labels for the superclass's training points, in member order.
    pub assignments: Vec<usize>,
    pub per_cluster_silhouette: Vec<f64>,
    pub mean_silhouette: f64,
    /// How many clusters were promoted out of their parent by overclustering.
    pub promoted: usize,
}

impl SuperclassClusters {
    pub fn k(&self) -> usize {
        self.units.len()
    }

    /// Hard assignment of one reduced point; ties go to the lowest index.
    pub fn assign_one(&self, x: &ndarray::ArrayView1<f64>) -> Result<usize> {
        match self.method {
            ClusterMethod::KMeans => {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, unit) in self.units.iter().enumerate() {
                    let d = sq_distance(x, &unit.mean.view());
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                Ok(best)
            }
            ClusterMethod::Gmm => {
                let mut best = 0usize;
                let mut best_v = f64::NEG_INFINITY;
                for (c, unit) in self.units.iter().enumerate() {
                    let cov = unit
                        .cov
                        .as_ref()
                        .ok_or_else(|| Error::invalid("gmm unit without covariance"))?;
                    let comp = MultivariateNormal::new(unit.mean.clone(), cov.clone())?;
                    let v = unit.weight.max(1e-300).ln() + comp.log_density(x)?;
                    if v > best_v {
                        best_v = v;
                        best = c;
                    }
                }
                Ok(best)
            }
        }
    }
}

/// Units straight from a fitted model (no promotions): native parameters.
fn units_from_model(
    model: &ClusterModel,
    assignments: &[usize],
) -> Vec<ClusterUnit> {
    let k = model.k();
    let mut sizes = vec![0usize; k];
    for &c in assignments {
        sizes[c] += 1;
    }
    let n = assignments.len().max(1);
    match model {
        ClusterModel::KMeans { centroids } => (0..k)
            .map(|c| ClusterUnit {
                weight: sizes[c] as f64 / n as f64,
                mean: centroids.row(c).to_owned(),
                cov: None,
                size: sizes[c],
            })
            .collect(),
        ClusterModel::Gmm(mixture) => (0..k)
            .map(|c| ClusterUnit {
                weight: mixture.weights()[c],
                mean: mixture.components()[c].mean().clone(),
                cov: Some(mixture.components()[c].cov().clone()),
                size: sizes[c],
            })
            .collect(),
    }
}

/// Units rebuilt from member moments; used once promotions changed the
/// partition so the stored parameters track the final clusters.
fn units_from_members(
    points: &ArrayView2<f64>,
    assignments: &[usize],
    k: usize,
    method: ClusterMethod,
) -> Vec<ClusterUnit> {
    let n = assignments.len().max(1);
    (0..k)
        .map(|c| {
            let members: Vec<usize> = assignments
                .iter()
                .enumerate()
                .filter(|(_, &a)| a == c)
                .map(|(i, _)| i)
                .collect();
            let rows = select_rows(points, &members);
            let mean = mean_rows(&rows.view());
            let cov = match method {
                ClusterMethod::KMeans => None,
                ClusterMethod::Gmm => {
                    let mut cov = covariance(&rows.view(), &mean.view());
                    for j in 0..cov.nrows() {
                        cov[(j, j)] += 1e-6;
                    }
                    Some(cov)
                }
            };
            ClusterUnit {
                weight: members.len() as f64 / n as f64,
                mean,
                cov,
                size: members.len(),
            }
        })
        .collect()
}

pub(crate) fn select_rows(points: &ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), points.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&points.row(i));
    }
    out
}

/// Split each base cluster into `factor` sub-clusters (same method) and
/// promote a sub-cluster to a standalone cluster when its per-cluster
/// Silhouette in the updated assignment exceeds the Silhouette of its parent
/// cluster in the base clustering and it holds at least `s_min` points.
/// Promotions are applied greedily in sub-cluster index order per base
/// cluster; a promotion that would empty its parent is skipped.
pub fn overcluster(
    points: &ArrayView2<f64>,
    base: &ClusterModel,
    factor: usize,
    s_min: usize,
    cap: usize,
    seed: u64,
) -> Result<SuperclassClusters> {
    if factor < 2 {
        return Err(Error::invalid("overclustering factor must be >= 2"));
    }
    let base_assign = base.assign_rows(points)?;
    let k_base = base.k();
    let base_sil = silhouette(points, &base_assign, cap)?;

    let mut assignments = base_assign.clone();
    let mut next_label = k_base;
    for ci in 0..k_base {
        let members: Vec<usize> = base_assign
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == ci)
            .map(|(i, _)| i)
            .collect();
        if members.len() < factor {
            continue;
        }
        let sub_points = select_rows(points, &members);
        let sub_seed = derive_seed(seed, ci as u64);
        let sub_assign = match base.method() {
            ClusterMethod::KMeans => match super::kmeans(&sub_points.view(), factor, sub_seed) {
                Ok(fit) => fit.assignments,
                Err(_) => continue, // degenerate geometry: leave unsplit
            },
            ClusterMethod::Gmm => match super::gmm_em(&sub_points.view(), factor, sub_seed) {
                Ok(fit) => ClusterModel::Gmm(fit.mixture).assign_rows(&sub_points.view())?,
                Err(_) => continue,
            },
        };
        let parent_score = base_sil.per_cluster[ci];
        for j in 0..factor {
            let candidate: Vec<usize> = members
                .iter()
                .zip(sub_assign.iter())
                .filter(|(_, &s)| s == j)
                .map(|(&i, _)| i)
                .collect();
            if candidate.len() < s_min {
                continue;
            }
            // the parent must keep at least one point
            let remaining = assignments
                .iter()
                .enumerate()
                .filter(|(i, &a)| a == ci && !candidate.contains(i))
                .count();
            if remaining == 0 {
                continue;
            }
            for &i in &candidate {
                assignments[i] = next_label;
            }
            let updated = match silhouette(points, &assignments, cap) {
                Ok(s) => s,
                Err(_) => {
                    for &i in &candidate {
                        assignments[i] = ci;
                    }
                    continue;
                }
            };
            if updated.per_cluster[next_label] > parent_score {
                next_label += 1;
            } else {
                for &i in &candidate {
                    assignments[i] = ci;
                }
            }
        }
    }

    let k_final = next_label;
    let promoted = k_final - k_base;
    let final_sil = if promoted == 0 {
        base_sil
    } else {
        silhouette(points, &assignments, cap)?
    };
    let units = if promoted == 0 {
        units_from_model(base, &assignments)
    } else {
        units_from_members(points, &assignments, k_final, base.method())
    };
    Ok(SuperclassClusters {
        method: base.method(),
        units,
        assignments,
        per_cluster_silhouette: final_sil.per_cluster,
        mean_silhouette: final_sil.mean,
        promoted,
    })
}

/// One superclass's chosen representation and clustering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperclassClustering {
    pub superclass: usize,
    pub representation: ReductionKind,
    pub reduction: Reduction,
    pub clusters: SuperclassClusters,
    /// Set when the superclass was too small to cluster and was kept whole.
    pub fallback_single: bool,
}

/// Clustering of every superclass plus the global proxy-subclass labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Clustering {
    pub per_superclass: Vec<SuperclassClustering>,
    /// Global cluster id = offsets[superclass] + local id.
    pub offsets: Vec<usize>,
    /// Global training assignments, one per dataset row.
    pub assignments: Vec<usize>,
    pub total_clusters: usize,
}

impl Clustering {
    pub fn global_id(&self, superclass: usize, local: usize) -> usize {
        self.offsets[superclass] + local
    }

    /// Superclass owning a global cluster id.
    pub fn superclass_of_cluster(&self, global: usize) -> usize {
        let mut b = 0;
        for (i, &off) in self.offsets.iter().enumerate() {
            if global >= off {
                b = i;
            }
        }
        b
    }
}

fn representation_candidates(
    dataset: &Dataset,
    features: &Array2<f64>,
    model: Option<&Classifier>,
    cfg: &ClusterConfig,
) -> Vec<(ReductionKind, Option<Reduction>)> {
    let mut out = Vec::new();
    let d = features.ncols();
    let pca_dim = cfg.pca_dim.min(d).max(1);
    out.push((ReductionKind::Pca, None));
    let _ = pca_dim;
    if cfg.use_loss_component && dataset.n_superclasses() == 2 {
        if let Some(m) = model {
            if let Ok(r) = fit_reduction(ReductionKind::LossComponent, features, 1, Some(m)) {
                out.push((ReductionKind::LossComponent, Some(r)));
            }
        }
    }
    out
}

/// Cluster the feature representations of each superclass: fit the candidate
/// representations, search (method, k) by Silhouette, overcluster
/// (skipped for 1-d representations), keep the representation with the
/// higher mean per-cluster Silhouette, and assemble global labels.
pub fn cluster_superclasses(
    dataset: &Dataset,
    features: &Array2<f64>,
    model: Option<&Classifier>,
    cfg: &ClusterConfig,
    seed: u64,
) -> Result<Clustering> {
    if features.nrows() != dataset.n() {
        return Err(Error::dims("feature matrix shorter than dataset"));
    }
    let n_super = dataset.n_superclasses();
    let mut per_superclass = Vec::with_capacity(n_super);
    for b in 0..n_super {
        let members = dataset.members_of_superclass(b);
        let n_b = members.len();
        let rows = select_rows(&features.view(), &members);
        if n_b < cfg.k_min.max(2) {
            per_superclass.push(single_cluster_fallback(b, &rows));
            continue;
        }
        let s_min = cfg.s_min_for(n_b);
        let mut best: Option<SuperclassClustering> = None;
        for (kind, prefit) in representation_candidates(dataset, &rows, model, cfg) {
            let reduction = match prefit {
                Some(r) => r,
                None => {
                    let dim = cfg.pca_dim.min(rows.ncols()).max(1);
                    match fit_reduction(kind, &rows, dim, model) {
                        Ok(r) => r,
                        Err(_) => continue,
                    }
                }
            };
            let reduced = transform(&reduction, &rows)?;
            let rep_seed = derive_seed(seed, (b * 4 + kind as usize) as u64);
            let outcome = match auto_cluster(
                &reduced.view(),
                (cfg.k_min, cfg.k_max),
                &cfg.methods,
                cfg.silhouette_cap,
                rep_seed,
            ) {
                Ok(o) => o,
                Err(_) => continue,
            };
            let clusters = if reduced.ncols() == 1 {
                // no overclustering for 1-d representations: interval splits
                // are artifacts, not structure
                let units = units_from_model(&outcome.model, &outcome.assignments);
                SuperclassClusters {
                    method: outcome.model.method(),
                    units,
                    assignments: outcome.assignments,
                    per_cluster_silhouette: outcome.score.per_cluster,
                    mean_silhouette: outcome.score.mean,
                    promoted: 0,
                }
            } else {
                overcluster(
                    &reduced.view(),
                    &outcome.model,
                    cfg.overcluster_factor,
                    s_min,
                    cfg.silhouette_cap,
                    derive_seed(rep_seed, 1),
                )?
            };
            let candidate = SuperclassClustering {
                superclass: b,
                representation: kind,
                reduction,
                clusters,
                fallback_single: false,
            };
            let better = match &best {
                None => true,
                Some(cur) => candidate.clusters.mean_silhouette > cur.clusters.mean_silhouette,
            };
            if better {
                best = Some(candidate);
            }
        }
        match best {
            Some(c) => per_superclass.push(c),
            None => per_superclass.push(single_cluster_fallback(b, &rows)),
        }
    }

    let mut offsets = Vec::with_capacity(n_super);
    let mut total = 0usize;
    for sc in &per_superclass {
        offsets.push(total);
        total += sc.clusters.k();
    }
    let mut assignments = vec![0usize; dataset.n()];
    for (b, sc) in per_superclass.iter().enumerate() {
        let members = dataset.members_of_superclass(b);
        for (pos, &i) in members.iter().enumerate() {
            assignments[i] = offsets[b] + sc.clusters.assignments[pos];
        }
    }
    Ok(Clustering {
        per_superclass,
        offsets,
        assignments,
        total_clusters: total,
    })
}

fn single_cluster_fallback(b: usize, rows: &Array2<f64>) -> SuperclassClustering {
    let n = rows.nrows();
    let mean = mean_rows(&rows.view());
    SuperclassClustering {
        superclass: b,
        representation: ReductionKind::Identity,
        reduction: Reduction::Identity,
        clusters: SuperclassClusters {
            method: ClusterMethod::KMeans,
            units: vec![ClusterUnit {
                weight: 1.0,
                mean,
                cov: None,
                size: n,
            }],
            assignments: vec![0; n],
            per_cluster_silhouette: vec![0.0],
            mean_silhouette: 0.0,
            promoted: 0,
        },
        fallback_single: true,
    }
}

/// Assign new points to the fitted clustering: each example is reduced with
/// its superclass's fitted reduction and mapped to the nearest centroid
/// (k-means) or the maximum-posterior component (GMM) within its superclass
/// block. Ties go to the lowest cluster index.
pub fn assign(
    clustering: &Clustering,
    dataset: &Dataset,
    features: &Array2<f64>,
) -> Result<Vec<usize>> {
    if features.nrows() != dataset.n() {
        return Err(Error::dims("feature matrix shorter than dataset"));
    }
    let n_super = clustering.per_superclass.len();
    let mut out = vec![0usize; dataset.n()];
    for b in 0..n_super {
        let members = dataset.members_of_superclass(b);
        if members.is_empty() {
            continue;
        }
        let sc = &clustering.per_superclass[b];
        let rows = select_rows(&features.view(), &members);
        let reduced = transform(&sc.reduction, &rows)?;
        for (pos, &i) in members.iter().enumerate() {
            let local = sc.clusters.assign_one(&reduced.row(pos))?;
            out[i] = clustering.offsets[b] + local;
        }
    }
    if dataset.labels().iter().any(|&y| y >= n_super) {
        return Err(Error::invalid(format!(
            "dataset contains a superclass label >= {n_super}, unknown to the clustering"
        )));
    }
    Ok(out)
}
