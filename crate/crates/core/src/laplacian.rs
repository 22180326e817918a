//! Random-walk normalizations built on the doubly stochastic kernel, their
//! graph Laplacians, and error scores.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::density::DensityEstimate;
use crate::error::{param, Error, Result};
use crate::kernel::{traditional_normalization, AffinityMatrix};
use crate::numerics::lse_excluding;
use crate::scaling::DoublyStochastic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Robust,
    Traditional,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Robust => "robust",
            Family::Traditional => "traditional",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "robust" => Ok(Family::Robust),
            "traditional" => Ok(Family::Traditional),
            other => param(format!("unknown family `{other}`")),
        }
    }
}

/// A row-stochastic matrix with zero diagonal and its Laplacian scale `4/ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovFamily {
    pub alpha: f64,
    pub markov: Array2<f64>,
    pub laplacian_scale: f64,
    pub source_tag: Family,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return param(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    Ok(())
}

/// `Ŵ^(α)`: the row normalization of `W_ij / (q̂_i q̂_j)^{α − 1/2}`.
///
/// At `α = 1/2` the matrix `W` is returned unchanged.
pub fn robust_markov(w: &DoublyStochastic, qhat: &DensityEstimate, alpha: f64) -> Result<MarkovFamily> {
    check_alpha(alpha)?;
    let n = w.n();
    if qhat.raw.len() != n {
        return Err(Error::Dimension("density length differs from W".into()));
    }
    if qhat.raw.iter().any(|q| !(*q > 0.0)) {
        return param("density estimates must be positive");
    }
    let scale = 4.0 / w.bandwidth();
    if alpha == 0.5 {
        return Ok(MarkovFamily {
            alpha,
            markov: w.linear().clone(),
            laplacian_scale: scale,
            source_tag: Family::Robust,
        });
    }
    // Row factor q̂_i^{-(α-1/2)} cancels; only the column offsets matter.
    let offsets: Vec<f64> = qhat.raw.iter().map(|q| -(alpha - 0.5) * q.ln()).collect();
    let mut markov = Array2::<f64>::zeros((n, n));
    markov
        .as_slice_mut()
        .expect("standard layout")
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let lw = w.log_row(i);
            let norm = lse_excluding(lw, &offsets, Some(i));
            for (j, v) in row.iter_mut().enumerate() {
                if j != i {
                    *v = (lw[j] + offsets[j] - norm).exp();
                }
            }
        });
    Ok(MarkovFamily {
        alpha,
        markov,
        laplacian_scale: scale,
        source_tag: Family::Robust,
    })
}

/// The classical `P̂^(α)` from the raw kernel.
pub fn traditional_markov(k: &AffinityMatrix, alpha: f64) -> Result<MarkovFamily> {
    Ok(MarkovFamily {
        alpha,
        markov: traditional_normalization(k, alpha)?,
        laplacian_scale: 4.0 / k.bandwidth(),
        source_tag: Family::Traditional,
    })
}

/// `(4/ε) (f_i − Σ_j M_ij f_j)`.
pub fn apply_laplacian(fam: &MarkovFamily, f: &[f64]) -> Result<Vec<f64>> {
    let n = fam.markov.nrows();
    if f.len() != n {
        return Err(Error::Dimension(format!("{} function values for {n} points", f.len())));
    }
    let fv = Array1::from(f.to_vec());
    let mf = fam.markov.dot(&fv);
    Ok(f.iter()
        .zip(mf.iter())
        .map(|(a, b)| fam.laplacian_scale * (a - b))
        .collect())
}

/// `max_i |L f − reference|`.
pub fn operator_error(fam: &MarkovFamily, f: &[f64], reference: &[f64]) -> Result<f64> {
    if reference.len() != f.len() {
        return Err(Error::Dimension("reference and function lengths differ".into()));
    }
    let lf = apply_laplacian(fam, f)?;
    Ok(lf.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Probability of stepping to a different class: mean over all points and
/// the worst per-class mean.
pub fn transition_error<L: PartialEq + Sync>(fam: &MarkovFamily, labels: &[L]) -> Result<(f64, f64)> {
    let n = fam.markov.nrows();
    if labels.len() != n {
        return Err(Error::Dimension(format!("{} labels for {n} points", labels.len())));
    }
    let leave: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = fam.markov.row(i);
            (0..n).filter(|&j| labels[j] != labels[i]).map(|j| row[j]).sum()
        })
        .collect();
    let mean = leave.iter().sum::<f64>() / n as f64;
    let mut classes: Vec<usize> = Vec::new();
    for i in 0..n {
        if !classes.iter().any(|&c| labels[c] == labels[i]) {
            classes.push(i);
        }
    }
    let worst = classes
        .iter()
        .map(|&c| {
            let members: Vec<f64> = (0..n).filter(|&i| labels[i] == labels[c]).map(|i| leave[i]).collect();
            members.iter().sum::<f64>() / members.len() as f64
        })
        .fold(0.0, f64::max);
    Ok((mean, worst))
}

/// Log-derivative `q'/q` of the wrapped normal density on the circle.
fn wrapped_normal_log_derivative(theta: f64, sigma_sq: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let t = theta.rem_euclid(two_pi);
    let images = ((6.0 * sigma_sq.sqrt()) / two_pi).ceil() as i64 + 2;
    let (mut num, mut den) = (0.0, 0.0);
    for k in -images..=images {
        let x = t + two_pi * k as f64;
        let g = (-x * x / (2.0 * sigma_sq)).exp();
        den += g;
        num -= x / sigma_sq * g;
    }
    num / den
}

/// `T^(α) f` on the unit circle for the test function `(cos θ + sin 2θ)/5`
/// under a wrapped normal density.
///
/// The sign matches the limit of `L = 4(I − M)/ε`, which is the negative
/// Laplacian: `−f'' − 2 (1 − α) f' q'/q`.
pub fn circle_operator_reference(angles: &[f64], alpha: f64, sigma_sq: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if !(sigma_sq > 0.0) {
        return param(format!("sigma_sq must be positive, got {sigma_sq}"));
    }
    Ok(angles
        .iter()
        .map(|&t| {
            let d1 = (-t.sin() + 2.0 * (2.0 * t).cos()) / 5.0;
            let d2 = (-t.cos() - 4.0 * (2.0 * t).sin()) / 5.0;
            -(d2 + 2.0 * (1.0 - alpha) * d1 * wrapped_normal_log_derivative(t, sigma_sq))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::ds_kde;
    use crate::geometry::{sample_circle, test_function_and_laplacian, wrapped_normal_density};
    use crate::kernel::{gaussian_kernel, pairwise_sq_dists};
    use crate::scaling::{assemble_W, sinkhorn_symmetric};
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;
    use std::f64::consts::PI;

    fn circle_setup(n: usize, eps: f64) -> (Vec<f64>, AffinityMatrix, DoublyStochastic, DensityEstimate) {
        let s = sample_circle(n, 0.16 * PI * PI, 1.0, 3).unwrap();
        let k = gaussian_kernel(&pairwise_sq_dists(&s.clean_points).unwrap(), eps).unwrap();
        let sol = sinkhorn_symmetric(&k, 1e-12, 100_000).unwrap();
        let w = assemble_W(&k, &sol).unwrap();
        let q = ds_kde(&w, 2.0).unwrap();
        (s.angles, k, w, q)
    }

    #[test]
    fn half_alpha_is_w_itself() {
        let (_, _, w, q) = circle_setup(60, 0.1);
        let fam = robust_markov(&w, &q, 0.5).unwrap();
        assert_eq!(&fam.markov, w.linear());
    }

    #[test]
    fn alpha_zero_matches_direct_formula() {
        let (_, _, w, q) = circle_setup(50, 0.1);
        let fam = robust_markov(&w, &q, 0.0).unwrap();
        let n = w.n();
        for i in 0..n {
            let row: Vec<f64> = (0..n)
                .map(|j| q.raw[i].sqrt() * w.linear()[[i, j]] * q.raw[j].sqrt())
                .collect();
            let s: f64 = row.iter().sum();
            for j in 0..n {
                assert!((fam.markov[[i, j]] - row[j] / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_density_makes_alpha_irrelevant() {
        let (_, _, w, mut q) = circle_setup(40, 0.1);
        q.raw.iter_mut().for_each(|v| *v = 0.7);
        let a = robust_markov(&w, &q, 0.0).unwrap();
        let b = robust_markov(&w, &q, 1.0).unwrap();
        for (x, y) in a.markov.iter().zip(b.markov.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn constants_are_annihilated() {
        let (_, k, w, q) = circle_setup(80, 0.05);
        for alpha in [0.0, 0.25, 0.5, 1.0] {
            for fam in [
                robust_markov(&w, &q, alpha).unwrap(),
                traditional_markov(&k, alpha).unwrap(),
            ] {
                for v in apply_laplacian(&fam, &vec![3.5; 80]).unwrap() {
                    assert!(v.abs() < 1e-9);
                }
                let rows = fam.markov.sum_axis(ndarray::Axis(1));
                assert!(rows.iter().all(|r| (r - 1.0).abs() < 1e-10));
                assert!(fam.markov.diag().iter().all(|d| *d == 0.0));
            }
        }
        assert!(robust_markov(&w, &q, 1.5).is_err());
        assert!(traditional_markov(&k, -0.1).is_err());
    }

    #[test]
    fn operator_error_against_itself_is_zero() {
        let (angles, _, w, q) = circle_setup(50, 0.1);
        let fam = robust_markov(&w, &q, 1.0).unwrap();
        let (f, _) = test_function_and_laplacian(&angles);
        let lf = apply_laplacian(&fam, &f).unwrap();
        assert_eq!(operator_error(&fam, &f, &lf).unwrap(), 0.0);
    }

    #[test]
    fn transition_error_basic_cases() {
        let markov = ndarray::array![
            [0.0, 0.9, 0.1, 0.0],
            [0.9, 0.0, 0.0, 0.1],
            [0.2, 0.0, 0.0, 0.8],
            [0.0, 0.0, 1.0, 0.0]
        ];
        let fam = MarkovFamily {
            alpha: 0.0,
            markov,
            laplacian_scale: 1.0,
            source_tag: Family::Robust,
        };
        let (mean, worst) = transition_error(&fam, &["a", "a", "b", "b"]).unwrap();
        assert!((mean - 0.1).abs() < 1e-15);
        assert!((worst - 0.1).abs() < 1e-15);
        let (mean, worst) = transition_error(&fam, &[1, 1, 1, 1]).unwrap();
        assert_eq!((mean, worst), (0.0, 0.0));
    }

    fn spectral_derivative(values: &[f64], order: u32) -> Vec<f64> {
        let n = values.len();
        let mut planner = FftPlanner::<f64>::new();
        let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        planner.plan_fft_forward(n).process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let freq = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            let freq = if n.is_multiple_of(2) && k == n / 2 && !order.is_multiple_of(2) {
                0.0
            } else {
                freq
            };
            *c *= Complex::new(0.0, freq).powu(order);
        }
        planner.plan_fft_inverse(n).process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }

    #[test]
    fn reference_matches_spectral_oracle() {
        let n = 256;
        let s2 = 0.16 * PI * PI;
        let grid: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
        let (f, _) = test_function_and_laplacian(&grid);
        let q: Vec<f64> = grid.iter().map(|&t| wrapped_normal_density(t, s2)).collect();
        for alpha in [0.0, 0.3, 1.0] {
            // T f = Δ(f g)/g − f Δg/g with g = q^{1−α} and Δ = −d²/dθ².
            let g: Vec<f64> = q.iter().map(|v| v.powf(1.0 - alpha)).collect();
            let fg: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a * b).collect();
            let lfg = spectral_derivative(&fg, 2);
            let lg = spectral_derivative(&g, 2);
            let oracle: Vec<f64> = (0..n).map(|i| -(lfg[i] / g[i] - f[i] * lg[i] / g[i])).collect();
            let got = circle_operator_reference(&grid, alpha, s2).unwrap();
            for i in 0..n {
                assert!(
                    (got[i] - oracle[i]).abs() < 1e-8,
                    "alpha {alpha} i {i}: {} {}",
                    got[i],
                    oracle[i]
                );
            }
        }
    }
}
