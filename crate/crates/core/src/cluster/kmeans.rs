//! Lloyd iterations with k-means++ seeding.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::sq_distance;
use crate::rng::seeded_rng;

use super::ClusterModel;

const MAX_ITERS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub n_iter: usize,
}

/// k-means++ seed indices: first uniform, the rest proportional to the
/// squared distance to the nearest already-chosen seed.
pub(crate) fn plus_plus_indices(
    points: &ArrayView2<f64>,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = points.nrows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_distance(&points.row(i), &points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // all remaining points coincide with a seed; fall back to uniform
            rng.random_range(0..n)
        } else {
            let mut u: f64 = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                u -= w;
                if u <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        chosen.push(next);
        for i in 0..n {
            let d = sq_distance(&points.row(i), &points.row(next));
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    chosen
}

fn assign_to_centroids(points: &ArrayView2<f64>, centroids: &Array2<f64>) -> Vec<usize> {
    let mut out = vec![0usize; points.nrows()];
    for (i, row) in points.rows().into_iter().enumerate() {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (c, cent) in centroids.rows().into_iter().enumerate() {
            let d = sq_distance(&row, &cent);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        out[i] = best;
    }
    out
}

/// Lloyd iterations until the assignment reaches a fixpoint or 300 rounds.
/// A cluster emptied during an update is re-seeded at the point currently
/// farthest from its assigned centroid.
pub fn kmeans(points: &ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeansFit> {
    let (n, d) = points.dim();
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if n < k {
        return Err(Error::invalid(format!("{n} points cannot form {k} clusters")));
    }
    let mut rng = seeded_rng(seed);
    let seeds = plus_plus_indices(points, k, &mut rng);
    let mut centroids = Array2::zeros((k, d));
    for (c, &i) in seeds.iter().enumerate() {
        centroids.row_mut(c).assign(&points.row(i));
    }
    let mut assignments = assign_to_centroids(points, &centroids);
    let mut n_iter = 0;
    for iter in 0..MAX_ITERS {
        n_iter = iter + 1;
        // update step
        let mut counts = vec![0usize; k];
        centroids.fill(0.0);
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for j in 0..d {
                centroids[(c, j)] += points[(i, j)];
            }
        }
        let mut reseeded = Vec::new();
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[(c, j)] /= counts[c] as f64;
                }
            } else {
                reseeded.push(c);
            }
        }
        for &c in &reseeded {
            // farthest point from its own centroid, skipping earlier re-seeds
            let mut far = None;
            let mut far_d = -1.0;
            for (i, &a) in assignments.iter().enumerate() {
                if counts[a] == 0 {
                    continue;
                }
                let dist = sq_distance(&points.row(i), &centroids.row(a));
                if dist > far_d {
                    far_d = dist;
                    far = Some(i);
                }
            }
            let i = far.ok_or_else(|| Error::numerical("kmeans lost every cluster"))?;
            centroids.row_mut(c).assign(&points.row(i));
            assignments[i] = c;
            counts[c] = 1;
        }
        let next = assign_to_centroids(points, &centroids);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let inertia = assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_distance(&points.row(i), &centroids.row(c)))
        .sum();
    Ok(KMeansFit {
        model: ClusterModel::KMeans { centroids },
        assignments,
        inertia,
        n_iter,
    })
}
