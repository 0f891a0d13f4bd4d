//! Small numerical helpers shared across modules.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// log(Σ exp(v_i)) with the usual max shift; -inf for an empty or all-(-inf) input.
pub fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = values.iter().map(|v| (v - m).exp()).sum();
    m + s.ln()
}

/// Column means of a row-per-example matrix.
pub fn mean_rows(points: &ArrayView2<f64>) -> Array1<f64> {
    let n = points.nrows().max(1) as f64;
    points.sum_axis(ndarray::Axis(0)) / n
}

/// Population covariance (1/n normalization) of mean-centered rows.
pub fn covariance(points: &ArrayView2<f64>, mean: &ArrayView1<f64>) -> Array2<f64> {
    let (n, d) = points.dim();
    let mut cov = Array2::<f64>::zeros((d, d));
    if n == 0 {
        return cov;
    }
    for row in points.rows() {
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    let nf = n as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / nf;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    cov
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending,
/// eigenvectors as columns in the matching order.
pub fn symmetric_eigen(matrix: &ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let d = matrix.nrows();
    if matrix.ncols() != d {
        return Err(Error::dims(format!(
            "symmetric_eigen needs a square matrix, got {}x{}",
            d,
            matrix.ncols()
        )));
    }
    let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for a in 0..d {
        for b in 0..d {
            if (matrix[(a, b)] - matrix[(b, a)]).abs() > 1e-9 * scale {
                return Err(Error::invalid("matrix is not symmetric"));
            }
        }
    }
    let m = nalgebra::DMatrix::from_fn(d, d, |r, c| matrix[(r, c)]);
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Array2::<f64>::zeros((d, d));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..d {
            vectors[(row, col)] = eig.eigenvectors[(row, src)];
        }
    }
    Ok((values, vectors))
}

/// Squared Euclidean distance between two rows.
pub fn sq_distance(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Ordinary least-squares slope and intercept of y against x.
pub fn least_squares_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid(
            "least_squares_line needs two same-length samples of size >= 2",
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx <= 0.0 {
        return Err(Error::undefined("slope undefined: zero variance in x"));
    }
    let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Mean and the half-width of a 95% interval (1.96 * sd / sqrt(n)).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt())
}
