//! Noise magnitudes, signal magnitudes, and corrected distances recovered
//! from the scaling factors, plus nearest-neighbor recovery scoring.

use ndarray::Array2;
use rayon::prelude::*;

use crate::density::{DensityEstimate, Exponent};
use crate::error::{param, Error, Result};
use crate::geometry::row_sq_norms;
use crate::kernel::pairwise_sq_dists;
use crate::scaling::{DoublyStochastic, ScalingSolution};

/// Agreement required between the two algebraic forms of the corrected distance.
pub const DISTANCE_FORM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    pub noise_sq_hat: Vec<f64>,
    pub signal_sq_hat: Vec<f64>,
    /// Corrected squared distances; the diagonal is NaN.
    pub corrected_dists: Array2<f64>,
    pub epsilon: f64,
    pub exponent: Exponent,
    pub dim: Option<usize>,
    /// Number of off-diagonal pairs `(i < j)` with a negative corrected distance.
    pub negative_pairs: usize,
}

/// `N̂_i = ε (log d_i + ½ log((n − 1) q̂_i))` using the raw density estimate.
pub fn noise_magnitude(sol: &ScalingSolution, qhat: &DensityEstimate, epsilon: f64) -> Result<Vec<f64>> {
    if !sol.converged {
        return Err(Error::Refused(format!(
            "scaling did not converge (residual {:e})",
            sol.residual
        )));
    }
    if !(epsilon > 0.0) {
        return param(format!("epsilon must be positive, got {epsilon}"));
    }
    let n = sol.n();
    if qhat.raw.len() != n {
        return Err(Error::Dimension("density length differs from the solution".into()));
    }
    if qhat.raw.iter().any(|q| !(*q > 0.0)) {
        return param("density estimates must be positive");
    }
    let log_nm1 = ((n - 1) as f64).ln();
    Ok(sol
        .log_d
        .iter()
        .zip(&qhat.raw)
        .map(|(ld, q)| epsilon * (ld + 0.5 * (log_nm1 + q.ln())))
        .collect())
}

/// Leading-order upward bias of [`noise_magnitude`]: `ε d log s / (4 (s − 1))`.
pub fn noise_bias(epsilon: f64, dim: usize, exponent: Exponent) -> f64 {
    epsilon * dim as f64 * exponent.log_ratio() / 4.0
}

/// Subtracts [`noise_bias`] from every entry.
pub fn debias(noise: &[f64], epsilon: f64, dim: usize, exponent: Exponent) -> Vec<f64> {
    let b = noise_bias(epsilon, dim, exponent);
    noise.iter().map(|v| v - b).collect()
}

/// Builds `Ŝ_i = ‖y_i‖² − N̂_i` and `D̂_ij = ‖y_i − y_j‖² − N̂_i − N̂_j`.
///
/// `sq_dists` may be passed to reuse an existing distance matrix.
pub fn signal_magnitude_and_distances(
    noisy_points: &Array2<f64>,
    noise_sq_hat: &[f64],
    sq_dists: Option<&Array2<f64>>,
    epsilon: f64,
    exponent: Exponent,
    dim: Option<usize>,
) -> Result<EstimateTable> {
    let n = noisy_points.nrows();
    if noise_sq_hat.len() != n {
        return param(format!("{} noise estimates for {n} points", noise_sq_hat.len()));
    }
    let owned;
    let dists = match sq_dists {
        Some(d) => {
            if d.dim() != (n, n) {
                return param("distance matrix does not match the point count");
            }
            d
        }
        None => {
            owned = pairwise_sq_dists(noisy_points)?;
            &owned
        }
    };
    let norms = row_sq_norms(noisy_points);
    let signal_sq_hat: Vec<f64> = norms.iter().zip(noise_sq_hat).map(|(y, n)| y - n).collect();
    let mut corrected = Array2::<f64>::zeros((n, n));
    corrected
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j {
                    f64::NAN
                } else {
                    dists[[i, j]] - (noise_sq_hat[i] + noise_sq_hat[j])
                };
            }
        });
    let negative_pairs = (0..n)
        .map(|i| ((i + 1)..n).filter(|&j| corrected[[i, j]] < 0.0).count())
        .sum();
    Ok(EstimateTable {
        noise_sq_hat: noise_sq_hat.to_vec(),
        signal_sq_hat,
        corrected_dists: corrected,
        epsilon,
        exponent,
        dim,
        negative_pairs,
    })
}

/// `D̂_ij = −ε log((n − 1) √q̂_i W_ij √q̂_j)`; the diagonal is NaN.
pub fn corrected_dists_from_w(w: &DoublyStochastic, qhat: &DensityEstimate) -> Result<Array2<f64>> {
    let n = w.n();
    if qhat.raw.len() != n {
        return Err(Error::Dimension("density length differs from W".into()));
    }
    let eps = w.bandwidth();
    let log_nm1 = ((n - 1) as f64).ln();
    let half_lq: Vec<f64> = qhat.raw.iter().map(|q| 0.5 * q.ln()).collect();
    let mut out = Array2::<f64>::zeros((n, n));
    out.as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let lw = w.log_row(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j {
                    f64::NAN
                } else {
                    -eps * (log_nm1 + lw[j] + (half_lq[i] + half_lq[j]))
                };
            }
        });
    Ok(out)
}

/// Max absolute off-diagonal difference between two corrected-distance matrices.
pub fn max_offdiag_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                worst = worst.max((a[[i, j]] - b[[i, j]]).abs());
            }
        }
    }
    worst
}

/// Full pipeline from a converged solution: raw `N̂`, the table, and a check
/// that both corrected-distance forms agree. When `debias_dim` is given the
/// bias constant is subtracted after the check.
pub fn estimate_table(
    noisy_points: &Array2<f64>,
    sq_dists: Option<&Array2<f64>>,
    sol: &ScalingSolution,
    w: &DoublyStochastic,
    qhat: &DensityEstimate,
    debias_dim: Option<usize>,
) -> Result<EstimateTable> {
    let eps = w.bandwidth();
    let noise = noise_magnitude(sol, qhat, eps)?;
    let table = signal_magnitude_and_distances(noisy_points, &noise, sq_dists, eps, qhat.exponent, None)?;
    let alt = corrected_dists_from_w(w, qhat)?;
    let gap = max_offdiag_diff(&table.corrected_dists, &alt);
    if !(gap <= DISTANCE_FORM_TOL) {
        return Err(Error::Refused(format!("corrected distance forms disagree by {gap:e}")));
    }
    match debias_dim {
        None => Ok(table),
        Some(dim) => {
            let noise = debias(&noise, eps, dim, qhat.exponent);
            signal_magnitude_and_distances(noisy_points, &noise, sq_dists, eps, qhat.exponent, Some(dim))
        }
    }
}

fn neighbor_order(row: &[f64], i: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&j| j != i).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

/// Mean fraction of the `k` nearest neighbors under `dists_a` that are among
/// the `k` nearest under `dists_clean`, for `k = 1..=k_max`.
pub fn knn_recovery_accuracy(dists_a: &Array2<f64>, dists_clean: &Array2<f64>, k_max: usize) -> Result<Vec<f64>> {
    let n = dists_a.nrows();
    if dists_a.dim() != (n, n) || dists_clean.dim() != (n, n) {
        return Err(Error::Dimension(
            "distance matrices must be square and equal in size".into(),
        ));
    }
    if k_max == 0 || k_max >= n {
        return param(format!("k_max must lie in 1..{n}, got {k_max}"));
    }
    let per_point: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let a = neighbor_order(dists_a.row(i).as_slice().expect("contiguous"), i);
            let c = neighbor_order(dists_clean.row(i).as_slice().expect("contiguous"), i);
            let mut pos_a = vec![usize::MAX; n];
            let mut pos_c = vec![usize::MAX; n];
            for (r, &j) in a.iter().enumerate() {
                pos_a[j] = r;
            }
            for (r, &j) in c.iter().enumerate() {
                pos_c[j] = r;
            }
            let mut overlap = 0;
            let mut counts = Vec::with_capacity(k_max);
            for k in 0..k_max {
                if pos_c[a[k]] <= k {
                    overlap += 1;
                }
                if c[k] != a[k] && pos_a[c[k]] < k {
                    overlap += 1;
                }
                counts.push(overlap);
            }
            counts
        })
        .collect();
    Ok((0..k_max)
        .map(|k| {
            let total: usize = per_point.iter().map(|c| c[k]).sum();
            total as f64 / ((k + 1) * n) as f64
        })
        .collect())
}
