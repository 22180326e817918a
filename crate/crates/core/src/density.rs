//! Density estimation from the doubly stochastic kernel, and a quadrature
//! solver for the population scaling function on the circle.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::numerics::{lse_excluding, lse_scaled_excluding};
use crate::scaling::{scale_log_kernel, DoublyStochastic};

/// Exponent `s` of the estimator, or its `s → 1` (entropy) limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Power(f64),
    Entropy,
}

impl Exponent {
    /// Global bias constant `d log s / (4 (s − 1))` appearing in noise estimates.
    pub fn log_ratio(&self) -> f64 {
        match *self {
            Exponent::Power(s) => s.ln() / (s - 1.0),
            Exponent::Entropy => 1.0,
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Power(s) => write!(f, "{s}"),
            Exponent::Entropy => f.write_str("limit"),
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        if t == "limit" || t == "entropy" || t == "1" || t == "1.0" {
            return Ok(Exponent::Entropy);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::Parameter(format!("exponent `{s}` is neither a number nor `limit`")))?;
        if !(v > 0.0) || !v.is_finite() {
            return param(format!("exponent must be positive, got {v}"));
        }
        Ok(Exponent::Power(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate {
    /// Unnormalized estimates `q̂_i`.
    pub raw: Vec<f64>,
    /// `raw / normalization_constant`, present once a dimension is supplied.
    pub normalized: Option<Vec<f64>>,
    pub exponent: Exponent,
    pub epsilon: f64,
    pub intrinsic_dim: Option<usize>,
}

impl DensityEstimate {
    /// Attaches the normalized estimate for intrinsic dimension `dim`.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        let c = normalization_constant(self.epsilon, dim, self.exponent)?;
        self.normalized = Some(self.raw.iter().map(|q| q / c).collect());
        self.intrinsic_dim = Some(dim);
        Ok(self)
    }

    pub fn log_raw(&self) -> Vec<f64> {
        self.raw.iter().map(|q| q.ln()).collect()
    }
}

/// `q̂_i = (Σ_j W_ij^s)^{1/(1−s)} / (n − 1)`, evaluated in the log domain.
pub fn ds_kde(w: &DoublyStochastic, s: f64) -> Result<DensityEstimate> {
    if !(s > 0.0) || !s.is_finite() {
        return param(format!("exponent must be positive, got {s}"));
    }
    if s == 1.0 {
        return param("s = 1 is undefined; use the entropy limit");
    }
    let n = w.n();
    let log_nm1 = ((n - 1) as f64).ln();
    let inv = 1.0 / (1.0 - s);
    let raw = (0..n)
        .into_par_iter()
        .map(|i| (inv * lse_scaled_excluding(w.log_row(i), s, Some(i)) - log_nm1).exp())
        .collect();
    Ok(DensityEstimate {
        raw,
        normalized: None,
        exponent: Exponent::Power(s),
        epsilon: w.bandwidth(),
        intrinsic_dim: None,
    })
}

/// The `s → 1` limit: row perplexity `exp(−Σ_j W_ij log W_ij) / (n − 1)`.
pub fn ds_kde_entropy(w: &DoublyStochastic) -> Result<DensityEstimate> {
    let n = w.n();
    let log_nm1 = ((n - 1) as f64).ln();
    let raw: Result<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = w.log_row(i);
            let mut h = 0.0;
            for (j, &l) in row.iter().enumerate() {
                if j == i {
                    continue;
                }
                if !l.is_finite() {
                    return param(format!("W entry ({i},{j}) is not positive"));
                }
                h -= l.exp() * l;
            }
            Ok((h - log_nm1).exp())
        })
        .collect();
    Ok(DensityEstimate {
        raw: raw?,
        normalized: None,
        exponent: Exponent::Entropy,
        epsilon: w.bandwidth(),
        intrinsic_dim: None,
    })
}

/// Dispatches on [`Exponent`].
pub fn estimate_density(w: &DoublyStochastic, exponent: Exponent) -> Result<DensityEstimate> {
    match exponent {
        Exponent::Power(s) => ds_kde(w, s),
        Exponent::Entropy => ds_kde_entropy(w),
    }
}

/// `(πε)^{d/2} s^{d/(2(s−1))}`, or `(πeε)^{d/2}` in the entropy limit.
pub fn normalization_constant(epsilon: f64, dim: usize, exponent: Exponent) -> Result<f64> {
    if !(epsilon > 0.0) {
        return param(format!("epsilon must be positive, got {epsilon}"));
    }
    if dim == 0 {
        return param("intrinsic dimension must be at least 1");
    }
    let d = dim as f64;
    Ok(match exponent {
        Exponent::Power(s) => {
            if !(s > 0.0) || s == 1.0 {
                return param(format!("invalid exponent {s}"));
            }
            (PI * epsilon).powf(d / 2.0) * s.powf(d / (2.0 * (s - 1.0)))
        }
        Exponent::Entropy => (PI * E * epsilon).powf(d / 2.0),
    })
}

/// Discretized solution of the population scaling equation on the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationScaling {
    /// Equispaced angles `2πk/N`.
    pub grid: Vec<f64>,
    pub rho: Vec<f64>,
    /// Density at the nodes (per unit arc length).
    pub density: Vec<f64>,
    pub epsilon: f64,
    /// Max back-substitution residual of the quadrature equation.
    pub residual: f64,
    pub iterations: usize,
}

impl PopulationScaling {
    /// `max_k |ρ_ε(θ_k) − q(θ_k)^{−1/2}|`.
    pub fn max_deviation_from_inverse_sqrt_density(&self) -> f64 {
        self.rho
            .iter()
            .zip(&self.density)
            .map(|(r, q)| (r - q.powf(-0.5)).abs())
            .fold(0.0, f64::max)
    }

    /// Empirical first-order factor `ρ_ε √q`, which tends to one as ε → 0.
    pub fn first_order_factor(&self) -> Vec<f64> {
        self.rho.iter().zip(&self.density).map(|(r, q)| r * q.sqrt()).collect()
    }
}

/// Smallest grid that places eight nodes per `√ε` of arc.
pub fn required_grid_size(epsilon: f64) -> usize {
    ((16.0 * PI / epsilon.sqrt()).ceil() as usize).max(256)
}

/// Solves `(πε)^{−1/2} ∫ ρ(x) K_ε(x,y) ρ(y) q(y) dμ(y) = 1` on the unit
/// circle with the trapezoid rule.
///
/// Quadrature weights `w_k = h q_k / √(πε)` are folded into a symmetric
/// kernel `√w_i K_ik √w_k` scaled to row sums `w_i`; then `ρ_k = σ_k / √w_k`.
pub fn solve_population_scaling_1d<F: Fn(f64) -> f64>(
    density: F,
    epsilon: f64,
    grid_size: usize,
) -> Result<PopulationScaling> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return param(format!("epsilon must be positive, got {epsilon}"));
    }
    let required = required_grid_size(epsilon);
    if grid_size < required {
        return Err(Error::Refused(format!(
            "grid of {grid_size} nodes under-resolves epsilon {epsilon}; need at least {required}"
        )));
    }
    let n = grid_size;
    let h = 2.0 * PI / n as f64;
    let grid: Vec<f64> = (0..n).map(|k| k as f64 * h).collect();
    let q: Vec<f64> = grid.iter().map(|&t| density(t)).collect();
    if q.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return param("density must be positive and finite on the grid");
    }
    let log_w: Vec<f64> = q.iter().map(|qk| (h * qk).ln() - 0.5 * (PI * epsilon).ln()).collect();
    // Chord distance depends only on the index gap.
    let log_kern: Vec<f64> = (0..n).map(|g| -(2.0 - 2.0 * (g as f64 * h).cos()) / epsilon).collect();
    let mut log_b = Array2::<f64>::zeros((n, n));
    log_b
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            for (k, v) in row.iter_mut().enumerate() {
                let gap = i.abs_diff(k);
                *v = log_kern[gap] + 0.5 * (log_w[i] + log_w[k]);
            }
        });
    let zeros = vec![0.0; n];
    let init: Vec<f64> = (0..n)
        .map(|i| 0.5 * (log_w[i] - lse_excluding(&log_b.as_slice().unwrap()[i * n..(i + 1) * n], &zeros, None)))
        .collect();
    let sol = scale_log_kernel(&log_b, false, Some(&log_w), 1e-11, 100_000, init)?;
    sol.ensure_converged()?;
    let log_rho: Vec<f64> = sol.log_d.iter().zip(&log_w).map(|(s, w)| s - 0.5 * w).collect();
    let rho: Vec<f64> = log_rho.iter().map(|v| v.exp()).collect();

    // Back-substitute into the quadrature form directly.
    let offsets: Vec<f64> = (0..n)
        .map(|k| log_rho[k] + (h * q[k]).ln() - 0.5 * (PI * epsilon).ln())
        .collect();
    let residual = (0..n)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = (0..n).map(|k| log_kern[i.abs_diff(k)]).collect();
            ((log_rho[i] + lse_excluding(&row, &offsets, None)).exp() - 1.0).abs()
        })
        .reduce(|| 0.0, f64::max);

    Ok(PopulationScaling {
        grid,
        rho,
        density: q,
        epsilon,
        residual,
        iterations: sol.iterations,
    })
}
