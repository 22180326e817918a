//! Pairwise distances, the zero-diagonal Gaussian kernel and its classical
//! (degree-based) normalizations. Everything downstream of the distances is
//! kept in the log domain.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::numerics::lse_excluding;

/// Largest number of points accepted by [`gaussian_kernel`].
pub const DEFAULT_MAX_POINTS: usize = 10_000;

/// Squared Euclidean distances between the rows of `points`.
///
/// Uses `‖a‖² + ‖b‖² − 2⟨a,b⟩` through one matrix product, clamps round-off
/// negatives at zero and mirrors the upper triangle so the result is exactly
/// symmetric with a zero diagonal.
pub fn pairwise_sq_dists(points: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, m) = points.dim();
    if n < 2 || m == 0 {
        return param(format!("need at least two points with positive dimension, got {n}x{m}"));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return param("points contain non-finite values");
    }
    let gram = points.dot(&points.t());
    Ok(sq_dists_from_gram(gram.view()))
}

/// Squared distances from a Gram matrix of inner products.
pub fn sq_dists_from_gram(gram: ArrayView2<f64>) -> Array2<f64> {
    let n = gram.nrows();
    let norms: Vec<f64> = (0..n).map(|i| gram[[i, i]]).collect();
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (norms[i] + norms[j] - 2.0 * gram[[i, j]]).max(0.0);
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

/// Gaussian kernel `K_ij = exp(−‖y_i − y_j‖²/ε)` with `K_ii = 0`, stored as logs.
///
/// The diagonal slot of `log_entries` holds a placeholder and is skipped by
/// every reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    log_entries: Array2<f64>,
    bandwidth: f64,
}

impl AffinityMatrix {
    /// Wraps an explicit log-kernel. Off-diagonal entries must be finite and
    /// exactly symmetric.
    pub fn from_log_entries(mut log_entries: Array2<f64>, bandwidth: f64) -> Result<Self> {
        let (n, c) = log_entries.dim();
        if n != c || n < 2 {
            return Err(Error::Dimension(format!(
                "kernel must be square with n >= 2, got {n}x{c}"
            )));
        }
        for i in 0..n {
            log_entries[[i, i]] = 0.0;
            for j in (i + 1)..n {
                let a = log_entries[[i, j]];
                if !a.is_finite() {
                    return param(format!("log kernel entry ({i},{j}) is not finite"));
                }
                if a != log_entries[[j, i]] {
                    return param(format!("log kernel is not symmetric at ({i},{j})"));
                }
            }
        }
        Ok(Self { log_entries, bandwidth })
    }

    pub fn n(&self) -> usize {
        self.log_entries.nrows()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Log entries; the diagonal is a placeholder and must be ignored.
    pub fn log_entries(&self) -> &Array2<f64> {
        &self.log_entries
    }

    pub fn log_row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.log_entries.as_slice().expect("standard layout")[i * n..(i + 1) * n]
    }

    /// `K_ij` in linear scale (zero on the diagonal).
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.log_entries[[i, j]].exp()
        }
    }

    /// Dense linear-domain kernel with zero diagonal.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut k = self.log_entries.mapv(f64::exp);
        k.diag_mut().fill(0.0);
        k
    }

    /// The kernel multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) || !c.is_finite() {
            return param("scale factor must be positive");
        }
        let shift = c.ln();
        let mut log = self.log_entries.mapv(|v| v + shift);
        log.diag_mut().fill(0.0);
        Ok(Self {
            log_entries: log,
            bandwidth: self.bandwidth,
        })
    }

    /// Applies the same permutation to rows and columns.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::Dimension("permutation length".into()));
        }
        let log = Array2::from_shape_fn((n, n), |(i, j)| self.log_entries[[perm[i], perm[j]]]);
        Self::from_log_entries(log, self.bandwidth)
    }
}

/// Builds the log-domain Gaussian kernel from squared distances.
pub fn gaussian_kernel(sq_dists: &Array2<f64>, epsilon: f64) -> Result<AffinityMatrix> {
    gaussian_kernel_with_cap(sq_dists, epsilon, DEFAULT_MAX_POINTS)
}

pub fn gaussian_kernel_with_cap(sq_dists: &Array2<f64>, epsilon: f64, max_points: usize) -> Result<AffinityMatrix> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return param(format!("epsilon must be positive, got {epsilon}"));
    }
    let (n, c) = sq_dists.dim();
    if n != c || n < 2 {
        return Err(Error::Dimension(format!(
            "distance matrix must be square with n >= 2, got {n}x{c}"
        )));
    }
    if n > max_points {
        return param(format!("{n} points exceed the dense cap of {max_points}"));
    }
    if sq_dists.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return param("squared distances must be finite and nonnegative");
    }
    let mut log = sq_dists.mapv(|d| -d / epsilon);
    log.diag_mut().fill(0.0);
    // Mirror so symmetry is exact even for a slightly asymmetric input.
    for i in 0..n {
        for j in (i + 1)..n {
            log[[j, i]] = log[[i, j]];
        }
    }
    Ok(AffinityMatrix {
        log_entries: log,
        bandwidth: epsilon,
    })
}

/// Node degrees `D_ii = Σ_{j≠i} K_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeVector {
    pub degrees: Vec<f64>,
    pub log_degrees: Vec<f64>,
}

pub fn degrees(k: &AffinityMatrix) -> DegreeVector {
    let n = k.n();
    let zeros = vec![0.0; n];
    let log_degrees: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| lse_excluding(k.log_row(i), &zeros, Some(i)))
        .collect();
    let degrees = log_degrees.iter().map(|v| v.exp()).collect();
    DegreeVector { degrees, log_degrees }
}

/// Standard kernel density estimate `D_ii / (n − 1)`, unnormalized.
///
/// Divide by `(πε)^{d/2}` to compare with a density.
pub fn standard_kde(k: &AffinityMatrix) -> Vec<f64> {
    let scale = 1.0 / (k.n() - 1) as f64;
    degrees(k).degrees.into_iter().map(|d| d * scale).collect()
}

/// Row-stochastic `P̂^(α)`, the row normalization of `D^{−α} K D^{−α}`.
pub fn traditional_normalization(k: &AffinityMatrix, alpha: f64) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return param(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    let n = k.n();
    let deg = degrees(k);
    // The D_i^{-α} factor is constant along row i and cancels.
    let offsets: Vec<f64> = deg.log_degrees.iter().map(|l| -alpha * l).collect();
    let mut out = Array2::<f64>::zeros((n, n));
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let lrow = k.log_row(i);
            let norm = lse_excluding(lrow, &offsets, Some(i));
            for j in 0..n {
                row[j] = if j == i {
                    0.0
                } else {
                    (lrow[j] + offsets[j] - norm).exp()
                };
            }
        });
    Ok(out)
}

/// Symmetric `P^(1/2) = D^{−1/2} K D^{−1/2}` (not stochastic).
pub fn symmetric_half_normalization(k: &AffinityMatrix) -> Array2<f64> {
    let n = k.n();
    let deg = degrees(k);
    let mut out = Array2::<f64>::zeros((n, n));
    for ((i, j), v) in out.indexed_iter_mut() {
        if i != j {
            *v = (k.log_entries()[[i, j]] - 0.5 * (deg.log_degrees[i] + deg.log_degrees[j])).exp();
        }
    }
    out
}

/// Maximum absolute deviation of the row sums of `a` from one.
pub fn max_row_sum_deviation(a: &Array2<f64>) -> f64 {
    a.sum_axis(Axis(1)).iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
}
