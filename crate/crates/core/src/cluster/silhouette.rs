//! Silhouette scores with a capped, stratified subsample.
//!
//! Per point: s = (b - a) / max(a, b) with `a` the mean distance to the rest
//! of its own cluster and `b` the smallest mean distance to another cluster.
//! Singleton clusters and coincident geometry (a = b = 0) score 0. The
//! per-cluster value is the mean over that cluster's (sampled) points; the
//! reported mean averages the per-cluster values, which is the quantity the
//! model search maximizes.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg::sq_distance;
use crate::rng::seeded_rng;

/// Fixed seed for the subsample; scores must not wobble across calls.
const SUBSAMPLE_SEED: u64 = 0x5117;

#[derive(Debug, Clone)]
pub struct SilhouetteScore {
    /// Mean of the per-cluster values.
    pub mean: f64,
    pub per_cluster: Vec<f64>,
    /// Number of points actually scored (min(n, cap)).
    pub n_used: usize,
}

/// Compute Silhouette scores. When `n > cap` the points are subsampled to
/// `cap`, proportionally per cluster with at least one point kept from each.
pub fn silhouette(
    points: &ArrayView2<f64>,
    assignments: &[usize],
    cap: usize,
) -> Result<SilhouetteScore> {
    let n = points.nrows();
    if assignments.len() != n {
        return Err(Error::dims("assignment vector length differs from points"));
    }
    if n == 0 {
        return Err(Error::invalid("no points to score"));
    }
    let k = assignments.iter().max().unwrap() + 1;
    if k < 2 {
        return Err(Error::undefined(
            "silhouette undefined for fewer than 2 clusters",
        ));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        members[c].push(i);
    }
    if members.iter().any(|m| m.is_empty()) {
        return Err(Error::invalid("every cluster must be nonempty"));
    }
    let cap = cap.max(k);
    let sample: Vec<usize> = if n <= cap {
        (0..n).collect()
    } else {
        stratified_subsample(&members, n, cap)
    };

    // mean distance from each sampled point to each cluster's sampled points
    let m = sample.len();
    let mut cluster_sizes = vec![0usize; k];
    for &i in &sample {
        cluster_sizes[assignments[i]] += 1;
    }
    let mut sum_s = vec![0.0; k];
    for (si, &i) in sample.iter().enumerate() {
        let ci = assignments[i];
        let mut dist_sum = vec![0.0f64; k];
        for (sj, &j) in sample.iter().enumerate() {
            if si == sj {
                continue;
            }
            dist_sum[assignments[j]] += sq_distance(&points.row(i), &points.row(j)).sqrt();
        }
        let own = cluster_sizes[ci];
        let s = if own <= 1 {
            0.0
        } else {
            let a = dist_sum[ci] / (own - 1) as f64;
            let mut b = f64::INFINITY;
            for c in 0..k {
                if c != ci && cluster_sizes[c] > 0 {
                    b = b.min(dist_sum[c] / cluster_sizes[c] as f64);
                }
            }
            let denom = a.max(b);
            if denom <= 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        };
        sum_s[ci] += s;
    }
    let per_cluster: Vec<f64> = (0..k)
        .map(|c| sum_s[c] / cluster_sizes[c].max(1) as f64)
        .collect();
    let mean = per_cluster.iter().sum::<f64>() / k as f64;
    Ok(SilhouetteScore {
        mean,
        per_cluster,
        n_used: m,
    })
}

fn stratified_subsample(members: &[Vec<usize>], n: usize, cap: usize) -> Vec<usize> {
    let mut rng = seeded_rng(SUBSAMPLE_SEED);
    let k = members.len();
    // proportional allocation, at least one per cluster, exact total
    let mut take: Vec<usize> = members
        .iter()
        .map(|m| ((m.len() * cap) / n).max(1).min(m.len()))
        .collect();
    let mut total: usize = take.iter().sum();
    // spend any remaining budget on the largest clusters
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(members[c].len()));
    let mut cursor = 0;
    while total < cap {
        let c = order[cursor % k];
        if take[c] < members[c].len() {
            take[c] += 1;
            total += 1;
        }
        cursor += 1;
        if cursor > 4 * k * cap {
            break;
        }
    }
    let mut sample = Vec::with_capacity(total);
    for (c, m) in members.iter().enumerate() {
        let mut idx = m.clone();
        idx.shuffle(&mut rng);
        sample.extend_from_slice(&idx[..take[c]]);
    }
    sample.sort_unstable();
    sample
}

#[cfg(test)]
pub(crate) fn silhouette_bruteforce(
    points: &ArrayView2<f64>,
    assignments: &[usize],
) -> (f64, Vec<f64>) {
    // textbook O(n^2) reference, written independently of the capped path
    let n = points.nrows();
    let k = assignments.iter().max().unwrap() + 1;
    let mut per_point = vec![0.0; n];
    for i in 0..n {
        let ci = assignments[i];
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = sq_distance(&points.row(i), &points.row(j)).sqrt();
            sums[assignments[j]] += d;
            counts[assignments[j]] += 1;
        }
        let own = assignments.iter().filter(|&&c| c == ci).count();
        if own <= 1 {
            per_point[i] = 0.0;
            continue;
        }
        let a = sums[ci] / (own - 1) as f64;
        let mut b = f64::INFINITY;
        for c in 0..k {
            if c != ci && counts[c] > 0 {
                b = b.min(sums[c] / counts[c] as f64);
            }
        }
        per_point[i] = if a.max(b) <= 0.0 { 0.0 } else { (b - a) / a.max(b) };
    }
    let mut per_cluster = vec![0.0; k];
    let mut sizes = vec![0usize; k];
    for (i, &c) in assignments.iter().enumerate() {
        per_cluster[c] += per_point[i];
        sizes[c] += 1;
    }
    for c in 0..k {
        per_cluster[c] /= sizes[c] as f64;
    }
    (per_cluster.iter().sum::<f64>() / k as f64, per_cluster)
}
