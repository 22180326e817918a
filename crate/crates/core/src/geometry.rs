//! Synthetic manifolds, sampling densities and noise models.
//!
//! Points live on one or more concentric circles, are embedded isometrically
//! into `R^m`, and are then corrupted by one of several noise models. Ground
//! truth (density, noise magnitude, angle, radius) travels with every sample.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{param, Error, Result};
use crate::rng::{derive_seed, stream, Stream};

const TWO_PI: f64 = 2.0 * PI;

/// Points sampled on a manifold together with their ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldSample {
    /// Circle parametrization `θ_i ∈ [0, 2π)`.
    pub angles: Vec<f64>,
    /// `n × m` clean coordinates.
    pub clean_points: Array2<f64>,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    /// Sampling density at each point, per unit arc length of the whole manifold.
    pub density_values: Vec<f64>,
    /// Radius of the circle each point lies on.
    pub radius_labels: Vec<f64>,
}

impl ManifoldSample {
    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Density per unit angle instead of per unit arc length.
    pub fn angular_density(&self) -> Vec<f64> {
        self.density_values
            .iter()
            .zip(&self.radius_labels)
            .map(|(q, r)| q * r)
            .collect()
    }

    /// Squared Euclidean norms of the clean points.
    pub fn sq_norms(&self) -> Vec<f64> {
        self.clean_points.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect()
    }
}

/// Which measure a density value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensityConvention {
    #[default]
    ArcLength,
    Angle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseTag {
    None,
    VaryingBall,
    OutlierGaussian,
    OutlierScaledGaussian,
    PoissonCounts,
}

impl fmt::Display for NoiseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NoiseTag::None => "none",
            NoiseTag::VaryingBall => "varying_ball",
            NoiseTag::OutlierGaussian => "outlier_gaussian",
            NoiseTag::OutlierScaledGaussian => "outlier_scaled_gaussian",
            NoiseTag::PoissonCounts => "poisson_counts",
        };
        f.write_str(s)
    }
}

/// Noise model descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Uniform in a ball of radius `base + amplitude (1 + cos θ) / 2`.
    VaryingBall {
        base: f64,
        amplitude: f64,
    },
    /// Zero with probability `clean_prob`, otherwise `N(0, (total_variance/m) I_m)`.
    OutlierGaussian {
        clean_prob: f64,
        total_variance: f64,
    },
    /// Zero with probability `clean_prob`, otherwise `N(0, (σ_i/m) I_m)`, `σ_i ~ U(0,1)`.
    OutlierScaledGaussian {
        clean_prob: f64,
    },
}

impl NoiseModel {
    pub fn varying_ball() -> Self {
        NoiseModel::VaryingBall {
            base: 0.01,
            amplitude: 0.49,
        }
    }

    pub fn outlier_gaussian() -> Self {
        NoiseModel::OutlierGaussian {
            clean_prob: 0.9,
            total_variance: 0.25,
        }
    }

    pub fn outlier_scaled_gaussian() -> Self {
        NoiseModel::OutlierScaledGaussian { clean_prob: 0.9 }
    }

    pub fn tag(&self) -> NoiseTag {
        match self {
            NoiseModel::None => NoiseTag::None,
            NoiseModel::VaryingBall { .. } => NoiseTag::VaryingBall,
            NoiseModel::OutlierGaussian { .. } => NoiseTag::OutlierGaussian,
            NoiseModel::OutlierScaledGaussian { .. } => NoiseTag::OutlierScaledGaussian,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::None => Ok(()),
            NoiseModel::VaryingBall { base, amplitude } => {
                if base < 0.0 || amplitude < 0.0 || !(base + amplitude).is_finite() {
                    return param("varying ball radii must be finite and nonnegative");
                }
                Ok(())
            }
            NoiseModel::OutlierGaussian {
                clean_prob,
                total_variance,
            } => {
                if !(0.0..=1.0).contains(&clean_prob) || !(total_variance >= 0.0) {
                    return param("outlier model needs clean_prob in [0,1] and variance >= 0");
                }
                Ok(())
            }
            NoiseModel::OutlierScaledGaussian { clean_prob } => {
                if !(0.0..=1.0).contains(&clean_prob) {
                    return param("outlier model needs clean_prob in [0,1]");
                }
                Ok(())
            }
        }
    }
}

impl FromStr for NoiseModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" | "clean" => Ok(NoiseModel::None),
            "varying_ball" | "varying" => Ok(NoiseModel::varying_ball()),
            "outlier_gaussian" | "outlier" => Ok(NoiseModel::outlier_gaussian()),
            "outlier_scaled_gaussian" => Ok(NoiseModel::outlier_scaled_gaussian()),
            other => Err(Error::Parameter(format!("unknown noise model `{other}`"))),
        }
    }
}

/// One draw of noise on top of a [`ManifoldSample`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub noise_vectors: Array2<f64>,
    pub noisy_points: Array2<f64>,
    pub true_noise_sq: Vec<f64>,
    pub model_tag: NoiseTag,
}

/// Centered wrapped normal density on `[0, 2π)`, per unit angle.
///
/// The image sum is truncated once the bound on the omitted terms drops
/// below `1e-12`.
pub fn wrapped_normal_density(theta: f64, sigma_sq: f64) -> f64 {
    let sigma = sigma_sq.sqrt();
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    let phi = |x: f64| norm * (-x * x / (2.0 * sigma_sq)).exp();
    let mut total = phi(theta);
    let mut k = 1usize;
    loop {
        total += phi(theta - TWO_PI * k as f64) + phi(theta + TWO_PI * k as f64);
        // |θ ∓ 2πj| ≥ 2π(j − 1) for every omitted j ≥ k + 1.
        let a = TWO_PI * k as f64;
        let tail = 2.0 * phi(a) * (1.0 + sigma_sq / (TWO_PI * a));
        if tail < 1e-12 {
            break;
        }
        k += 1;
    }
    total
}

fn check_circle_params(n: usize, sigma_sq: f64, radius: f64) -> Result<()> {
    if n < 3 {
        return param(format!("need n >= 3 points, got {n}"));
    }
    if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
        return param(format!("sigma_sq must be positive, got {sigma_sq}"));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return param(format!("radius must be positive, got {radius}"));
    }
    Ok(())
}

/// Samples `n` points on a circle in `R^2`, angles `N(0, σ²) mod 2π`.
pub fn sample_circle(n: usize, sigma_sq: f64, radius: f64, seed: u64) -> Result<ManifoldSample> {
    check_circle_params(n, sigma_sq, radius)?;
    let normal = Normal::new(0.0, sigma_sq.sqrt()).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut rng = stream(seed, Stream::Sampling);
    let angles: Vec<f64> = (0..n)
        .map(|_| {
            let t: f64 = normal.sample(&mut rng);
            // rem_euclid can round up to exactly 2π for tiny negative inputs.
            let a = t.rem_euclid(TWO_PI);
            if a >= TWO_PI {
                0.0
            } else {
                a
            }
        })
        .collect();
    let mut clean_points = Array2::zeros((n, 2));
    for (i, &a) in angles.iter().enumerate() {
        clean_points[[i, 0]] = radius * a.cos();
        clean_points[[i, 1]] = radius * a.sin();
    }
    let density_values = angles
        .iter()
        .map(|&a| wrapped_normal_density(a, sigma_sq) / radius)
        .collect();
    Ok(ManifoldSample {
        angles,
        clean_points,
        ambient_dim: 2,
        intrinsic_dim: 1,
        density_values,
        radius_labels: vec![radius; n],
    })
}

/// Concentric circles with equal point counts and the same angular law on each.
///
/// Densities are with respect to arc length on the union, so each circle
/// carries probability `1 / radii.len()`.
pub fn sample_concentric_circles(
    n_per_circle: usize,
    sigma_sq: f64,
    radii: &[f64],
    seed: u64,
) -> Result<ManifoldSample> {
    if radii.is_empty() {
        return param("need at least one radius");
    }
    let share = 1.0 / radii.len() as f64;
    let mut parts = Vec::with_capacity(radii.len());
    for (c, &r) in radii.iter().enumerate() {
        if r > 1.0 {
            return param(format!("radius {r} exceeds the unit ball"));
        }
        parts.push(sample_circle(n_per_circle, sigma_sq, r, derive_seed(seed, c as u64))?);
    }
    let n = n_per_circle * radii.len();
    let mut clean_points = Array2::zeros((n, 2));
    let mut angles = Vec::with_capacity(n);
    let mut density_values = Vec::with_capacity(n);
    let mut radius_labels = Vec::with_capacity(n);
    for (c, part) in parts.into_iter().enumerate() {
        let off = c * n_per_circle;
        clean_points
            .slice_mut(ndarray::s![off..off + n_per_circle, ..])
            .assign(&part.clean_points);
        angles.extend(part.angles);
        density_values.extend(part.density_values.iter().map(|q| q * share));
        radius_labels.extend(part.radius_labels);
    }
    Ok(ManifoldSample {
        angles,
        clean_points,
        ambient_dim: 2,
        intrinsic_dim: 1,
        density_values,
        radius_labels,
    })
}

/// `m × k` matrix with orthonormal columns from a seeded Gaussian matrix.
pub fn random_orthonormal_columns(m: usize, k: usize, seed: u64) -> Result<Array2<f64>> {
    if k > m {
        return param(format!("cannot fit {k} orthonormal columns in R^{m}"));
    }
    let mut rng = stream(seed, Stream::Embedding);
    let mut q = Array2::<f64>::zeros((m, k));
    for v in q.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    // Modified Gram-Schmidt, applied twice for orthogonality at round-off level.
    for _ in 0..2 {
        for c in 0..k {
            for p in 0..c {
                let proj = q.column(c).dot(&q.column(p));
                let prev = q.column(p).to_owned();
                q.column_mut(c).scaled_add(-proj, &prev);
            }
            let norm = q.column(c).dot(&q.column(c)).sqrt();
            if norm == 0.0 {
                return Err(Error::Refused("degenerate Gaussian draw".into()));
            }
            q.column_mut(c).mapv_inplace(|v| v / norm);
        }
    }
    Ok(q)
}

/// Maps the clean points into `R^m` with a random isometry.
pub fn embed_orthogonal(sample: &ManifoldSample, m: usize, seed: u64) -> Result<ManifoldSample> {
    let k = sample.clean_points.ncols();
    if m < k {
        return param(format!("ambient dimension {m} is below the embedding dimension {k}"));
    }
    let basis = random_orthonormal_columns(m, k, seed)?;
    let clean_points = sample.clean_points.dot(&basis.t());
    Ok(ManifoldSample {
        clean_points,
        ambient_dim: m,
        ..sample.clone()
    })
}

/// Draws noise for every point and returns `y_i = x_i + η_i`.
pub fn apply_noise(sample: &ManifoldSample, model: &NoiseModel, seed: u64) -> Result<NoiseRealization> {
    model.validate()?;
    let (n, m) = sample.clean_points.dim();
    let mut rng = stream(seed, Stream::Noise);
    let mut raw = Array2::<f64>::zeros((n, m));
    match *model {
        NoiseModel::None => {}
        NoiseModel::VaryingBall { base, amplitude } => {
            for (i, mut row) in raw.axis_iter_mut(Axis(0)).enumerate() {
                let r = base + amplitude * (1.0 + sample.angles[i].cos()) / 2.0;
                sample_ball(&mut rng, row.as_slice_mut().unwrap(), r);
            }
        }
        NoiseModel::OutlierGaussian {
            clean_prob,
            total_variance,
        } => {
            let sd = (total_variance / m as f64).sqrt();
            for mut row in raw.axis_iter_mut(Axis(0)) {
                if rng.random::<f64>() >= clean_prob {
                    for v in row.iter_mut() {
                        *v = sd * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
        }
        NoiseModel::OutlierScaledGaussian { clean_prob } => {
            for mut row in raw.axis_iter_mut(Axis(0)) {
                if rng.random::<f64>() >= clean_prob {
                    let sigma: f64 = rng.random();
                    let sd = (sigma / m as f64).sqrt();
                    for v in row.iter_mut() {
                        *v = sd * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
        }
    }
    let noisy_points = &sample.clean_points + &raw;
    // Recover the noise from the rounded sum so that y − x == η holds bit-exactly.
    let noise_vectors = &noisy_points - &sample.clean_points;
    let true_noise_sq = noise_vectors.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect();
    Ok(NoiseRealization {
        noise_vectors,
        noisy_points,
        true_noise_sq,
        model_tag: model.tag(),
    })
}

/// Uniform draw from the ball of radius `r`: uniform direction, radius `r U^{1/m}`.
fn sample_ball<R: Rng>(rng: &mut R, out: &mut [f64], r: f64) {
    let m = out.len();
    loop {
        let mut norm_sq = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            norm_sq += *v * *v;
        }
        if norm_sq > 0.0 {
            let u: f64 = rng.random();
            let scale = r * u.powf(1.0 / m as f64) / norm_sq.sqrt();
            out.iter_mut().for_each(|v| *v *= scale);
            return;
        }
    }
}

/// The circle test function `f(θ) = (cos θ + sin 2θ)/5` and its image
/// `(−cos θ − 4 sin 2θ)/5` under the Laplace–Beltrami operator.
pub fn test_function_and_laplacian(angles: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let f = angles.iter().map(|&t| (t.cos() + (2.0 * t).sin()) / 5.0).collect();
    let lf = angles
        .iter()
        .map(|&t| (-t.cos() - 4.0 * (2.0 * t).sin()) / 5.0)
        .collect();
    (f, lf)
}

/// Trapezoid integral of a density over every circle of the sample's layout.
///
/// `density(θ, r)` is per unit arc length; each circle contributes `∫ q r dθ`.
pub fn integrate_over_circles<F: Fn(f64, f64) -> f64>(radii: &[f64], nodes: usize, density: F) -> f64 {
    let h = TWO_PI / nodes as f64;
    radii
        .iter()
        .map(|&r| (0..nodes).map(|k| density(k as f64 * h, r) * r).sum::<f64>() * h)
        .sum()
}

/// Squared norms of each row.
pub fn row_sq_norms(points: &Array2<f64>) -> Array1<f64> {
    points.axis_iter(Axis(0)).map(|r| r.dot(&r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::pairwise_sq_dists;

    fn series_oracle(theta: f64, sigma_sq: f64, k_max: i64) -> f64 {
        (-k_max..=k_max)
            .map(|k| {
                let x = theta - TWO_PI * k as f64;
                (-x * x / (2.0 * sigma_sq)).exp() / (2.0 * PI * sigma_sq).sqrt()
            })
            .sum()
    }

    #[test]
    fn wrapped_normal_matches_long_series() {
        let s2 = 0.16 * PI * PI;
        for &t in &[0.0, 0.3, PI, 5.9] {
            let got = wrapped_normal_density(t, s2);
            assert!((got - series_oracle(t, s2, 50)).abs() < 1e-10);
        }
    }

    #[test]
    fn wrapped_normal_symmetric_and_normalized() {
        let s2 = 0.16 * PI * PI;
        let a = wrapped_normal_density(1.1, s2);
        let b = wrapped_normal_density(TWO_PI - 1.1, s2);
        assert!((a - b).abs() < 1e-14);
        let nodes = 10_000;
        let h = TWO_PI / nodes as f64;
        let total: f64 = (0..nodes)
            .map(|k| wrapped_normal_density(k as f64 * h, s2))
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn wide_wrapped_normal_is_nearly_uniform() {
        let s = sample_circle(50, 1e6, 1.0, 3).unwrap();
        let u = 1.0 / TWO_PI;
        for q in &s.density_values {
            assert!((q - u).abs() / u < 1e-3);
        }
        let s = sample_circle(50, 1e6, 0.5, 3).unwrap();
        let u = 1.0 / (TWO_PI * 0.5);
        for q in &s.density_values {
            assert!((q - u).abs() / u < 1e-3);
        }
    }

    #[test]
    fn circle_points_have_radius_norm() {
        let s = sample_circle(3, 1.0, 1.0, 1).unwrap();
        for nrm in s.sq_norms() {
            assert!((nrm.sqrt() - 1.0).abs() < 1e-12);
        }
        let s = sample_circle(100, 0.16 * PI * PI, 0.5, 1).unwrap();
        for nrm in s.sq_norms() {
            assert!((nrm.sqrt() - 0.5).abs() < 1e-12);
        }
        assert!(s.angles.iter().all(|a| (0.0..TWO_PI).contains(a)));
    }

    #[test]
    fn circle_density_peaks_near_zero_angle() {
        let s = sample_circle(2000, 0.16 * PI * PI, 1.0, 11).unwrap();
        let near = s.angles.iter().filter(|a| **a < 0.5 || **a > TWO_PI - 0.5).count();
        let opposite = s.angles.iter().filter(|a| (**a - PI).abs() < 0.5).count();
        assert!(near > 3 * opposite);
    }

    #[test]
    fn circle_parameter_errors() {
        assert!(sample_circle(2, 1.0, 1.0, 0).is_err());
        assert!(sample_circle(10, 0.0, 1.0, 0).is_err());
        assert!(sample_circle(10, 1.0, -1.0, 0).is_err());
    }

    #[test]
    fn density_integrates_to_one() {
        let s2 = 0.16 * PI * PI;
        let single = integrate_over_circles(&[1.0], 4096, |t, r| wrapped_normal_density(t, s2) / r);
        assert!((single - 1.0).abs() < 1e-6);
        let two = integrate_over_circles(&[1.0, 0.5], 4096, |t, r| 0.5 * wrapped_normal_density(t, s2) / r);
        assert!((two - 1.0).abs() < 1e-6);
    }

    #[test]
    fn embedding_is_an_isometry() {
        let s = sample_circle(40, 0.5, 1.0, 5).unwrap();
        let before = pairwise_sq_dists(&s.clean_points).unwrap();
        let e1 = embed_orthogonal(&s, 2000, 1).unwrap();
        let e2 = embed_orthogonal(&s, 2000, 2).unwrap();
        assert_ne!(e1.clean_points, e2.clean_points);
        for nrm in e1.sq_norms() {
            assert!((nrm.sqrt() - 1.0).abs() < 1e-10);
        }
        let d1 = pairwise_sq_dists(&e1.clean_points).unwrap();
        let d2 = pairwise_sq_dists(&e2.clean_points).unwrap();
        let diff1 = (&d1 - &before).mapv(f64::abs).fold(0.0f64, |a, b| a.max(*b));
        let diff2 = (&d2 - &before).mapv(f64::abs).fold(0.0f64, |a, b| a.max(*b));
        assert!(diff1 < 1e-10 && diff2 < 1e-10, "{diff1} {diff2}");
        assert!(embed_orthogonal(&s, 1, 1).is_err());
    }

    #[test]
    fn noise_none_is_identity() {
        let s = embed_orthogonal(&sample_circle(20, 1.0, 1.0, 1).unwrap(), 5, 1).unwrap();
        let z = apply_noise(&s, &NoiseModel::None, 1).unwrap();
        assert_eq!(z.noisy_points, s.clean_points);
        assert!(z.true_noise_sq.iter().all(|v| *v == 0.0));
        assert_eq!(z.model_tag, NoiseTag::None);
    }

    #[test]
    fn noise_invariants_hold_exactly() {
        let s = embed_orthogonal(&sample_circle(200, 1.0, 1.0, 1).unwrap(), 50, 1).unwrap();
        for model in [
            NoiseModel::varying_ball(),
            NoiseModel::outlier_gaussian(),
            NoiseModel::outlier_scaled_gaussian(),
        ] {
            let z = apply_noise(&s, &model, 9).unwrap();
            assert_eq!(&z.noisy_points - &s.clean_points, z.noise_vectors);
            for (i, row) in z.noise_vectors.axis_iter(Axis(0)).enumerate() {
                assert!((row.dot(&row) - z.true_noise_sq[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn varying_ball_radius_follows_angle() {
        let s = embed_orthogonal(&sample_circle(500, 1.0, 1.0, 4).unwrap(), 100, 1).unwrap();
        let z = apply_noise(&s, &NoiseModel::varying_ball(), 2).unwrap();
        for (i, &t) in s.angles.iter().enumerate() {
            let r = 0.01 + 0.49 * (1.0 + t.cos()) / 2.0;
            assert!(z.true_noise_sq[i].sqrt() <= r + 1e-12);
        }
        // At θ = π the radius collapses to 0.01.
        let mut one = s.clone();
        one.angles = vec![PI; s.len()];
        let z = apply_noise(&one, &NoiseModel::varying_ball(), 2).unwrap();
        assert!(z.true_noise_sq.iter().all(|v| v.sqrt() <= 0.01 + 1e-15));
    }

    #[test]
    fn outlier_fraction_is_ninety_percent_clean() {
        let s = sample_circle(10_000, 1.0, 1.0, 4).unwrap();
        let z = apply_noise(&s, &NoiseModel::outlier_gaussian(), 8).unwrap();
        let zero = z.true_noise_sq.iter().filter(|v| **v == 0.0).count() as f64 / 1e4;
        assert!((zero - 0.9).abs() < 0.01, "{zero}");
    }

    #[test]
    fn noise_models_are_mean_zero() {
        let n = 100_000;
        let m = 3;
        let mut s = sample_circle(n, 1.0, 1.0, 4).unwrap();
        s = embed_orthogonal(&s, m, 1).unwrap();
        for model in [
            NoiseModel::varying_ball(),
            NoiseModel::outlier_gaussian(),
            NoiseModel::outlier_scaled_gaussian(),
        ] {
            let z = apply_noise(&s, &model, 21).unwrap();
            let mean = z.noise_vectors.mean_axis(Axis(0)).unwrap();
            let var = z.noise_vectors.var_axis(Axis(0), 1.0);
            for c in 0..m {
                let bound = 3.0 * var[c].sqrt() / (n as f64).sqrt();
                assert!(mean[c].abs() < bound, "{model:?} coord {c}: {} vs {bound}", mean[c]);
            }
        }
    }

    #[test]
    fn same_seed_same_sample() {
        let a = sample_circle(30, 1.0, 1.0, 99).unwrap();
        let b = sample_circle(30, 1.0, 1.0, 99).unwrap();
        assert_eq!(a, b);
        let ea = apply_noise(&embed_orthogonal(&a, 10, 3).unwrap(), &NoiseModel::varying_ball(), 4).unwrap();
        let eb = apply_noise(&embed_orthogonal(&b, 10, 3).unwrap(), &NoiseModel::varying_ball(), 4).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn test_function_closed_forms() {
        let (f, lf) = test_function_and_laplacian(&[0.0, PI / 2.0]);
        assert!((f[0] - 0.2).abs() < 1e-15 && (lf[0] + 0.2).abs() < 1e-15);
        assert!(f[1].abs() < 1e-15 && lf[1].abs() < 1e-15);
        let h = 1e-4;
        let grid: Vec<f64> = (0..200).map(|k| 0.03 * k as f64 + 0.01).collect();
        let (_, lf) = test_function_and_laplacian(&grid);
        for (k, &t) in grid.iter().enumerate() {
            let (fs, _) = test_function_and_laplacian(&[t - h, t, t + h]);
            let fd = (fs[0] - 2.0 * fs[1] + fs[2]) / (h * h);
            assert!((fd - lf[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn unknown_noise_name_is_rejected() {
        assert!("gaussian-blob".parse::<NoiseModel>().is_err());
        assert_eq!(
            "varying-ball".parse::<NoiseModel>().unwrap().tag(),
            NoiseTag::VaryingBall
        );
    }
}
