//! Experiment orchestration: each figure of the study is a sweep over `n` or
//! `ε`, repeated with derived seeds, and reduced to a long-format CSV table.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array2;

use crate::counts::{normalize_counts, synth_poisson_counts, LatentClusters};
use crate::density::{estimate_density, DensityEstimate, Exponent};
use crate::error::{param, Error, Result};
use crate::geometry::{
    apply_noise, embed_orthogonal, sample_circle, sample_concentric_circles, test_function_and_laplacian,
    ManifoldSample, NoiseModel, NoiseRealization,
};
use crate::inference::{estimate_table, knn_recovery_accuracy, noise_magnitude};
use crate::kernel::{gaussian_kernel, pairwise_sq_dists, standard_kde, AffinityMatrix};
use crate::laplacian::{operator_error, robust_markov, traditional_markov, transition_error};
use crate::numerics::{mean, pearson, spearman, std_dev};
use crate::rng::derive_seed;
use crate::scaling::{assemble_W, sinkhorn_symmetric_with, DoublyStochastic, ScalingOptions, ScalingSolution};

/// Angular variance of the sampling law on the circle.
pub const CIRCLE_SIGMA_SQ: f64 = 0.16 * std::f64::consts::PI * std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    /// Density estimates on one dataset per noise setting.
    Fig1,
    /// Density error against `n`.
    Fig3,
    /// Noise and signal magnitudes on two concentric circles.
    Fig4,
    /// Density error against `ε`.
    Fig5,
    /// Corrected distances and nearest-neighbor recovery.
    Fig6,
    /// Laplacian approximation error.
    Fig7,
    /// Poisson counts: noise prediction and transition errors.
    Fig8Synthetic,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 7] = [
        ExperimentId::Fig1,
        ExperimentId::Fig3,
        ExperimentId::Fig4,
        ExperimentId::Fig5,
        ExperimentId::Fig6,
        ExperimentId::Fig7,
        ExperimentId::Fig8Synthetic,
    ];
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentId::Fig1 => "fig1",
            ExperimentId::Fig3 => "fig3",
            ExperimentId::Fig4 => "fig4",
            ExperimentId::Fig5 => "fig5",
            ExperimentId::Fig6 => "fig6",
            ExperimentId::Fig7 => "fig7",
            ExperimentId::Fig8Synthetic => "fig8-synthetic",
        })
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| {
                id.to_string() == s.trim().to_ascii_lowercase() || (s == "fig8" && *id == ExperimentId::Fig8Synthetic)
            })
            .ok_or_else(|| Error::Parameter(format!("unknown experiment `{s}`")))
    }
}

/// What the sweep values mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    SampleSize,
    Bandwidth,
}

impl SweepKind {
    fn name(&self) -> &'static str {
        match self {
            SweepKind::SampleSize => "n",
            SweepKind::Bandwidth => "epsilon",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub sweep_kind: SweepKind,
    pub sweep: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
    pub exponents: Vec<Exponent>,
    pub dim: usize,
    pub noise: Vec<NoiseModel>,
    /// Bandwidth when sweeping over `n`.
    pub epsilon: f64,
    /// Sample size when sweeping over `ε`.
    pub n: usize,
    /// Ambient dimension; `None` means `m = n`.
    pub ambient: Option<usize>,
    pub k_max: usize,
    pub alphas: Vec<f64>,
    pub out: Option<PathBuf>,
}

fn geometric(start: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start * 2f64.powi(k as i32)).collect()
}

impl ExperimentConfig {
    /// Desk-scale defaults for each experiment.
    pub fn new(experiment: ExperimentId) -> Self {
        let three = vec![
            NoiseModel::None,
            NoiseModel::varying_ball(),
            NoiseModel::outlier_gaussian(),
        ];
        let all_s = vec![Exponent::Power(0.5), Exponent::Entropy, Exponent::Power(2.0)];
        let base = Self {
            experiment,
            sweep_kind: SweepKind::SampleSize,
            sweep: vec![2000.0],
            repeats: 10,
            seed: 0,
            exponents: vec![Exponent::Power(2.0)],
            dim: 1,
            noise: three.clone(),
            epsilon: 0.1,
            n: 2000,
            ambient: None,
            k_max: 50,
            alphas: vec![1.0],
            out: None,
        };
        match experiment {
            ExperimentId::Fig1 => Self { repeats: 1, ..base },
            ExperimentId::Fig3 => Self {
                sweep: vec![500.0, 1000.0, 2000.0, 3000.0],
                exponents: all_s,
                ..base
            },
            ExperimentId::Fig5 => Self {
                sweep_kind: SweepKind::Bandwidth,
                sweep: geometric(0.0125, 6),
                exponents: all_s,
                ..base
            },
            ExperimentId::Fig4 => Self {
                sweep: vec![1000.0],
                repeats: 1,
                noise: vec![NoiseModel::outlier_scaled_gaussian()],
                ambient: Some(500),
                ..base
            },
            ExperimentId::Fig6 => Self {
                sweep: vec![1000.0],
                repeats: 1,
                noise: vec![NoiseModel::varying_ball()],
                ..base
            },
            ExperimentId::Fig7 => Self {
                sweep_kind: SweepKind::Bandwidth,
                sweep: geometric(0.0125, 5),
                noise: vec![NoiseModel::None, NoiseModel::varying_ball()],
                ..base
            },
            ExperimentId::Fig8Synthetic => Self {
                sweep_kind: SweepKind::Bandwidth,
                sweep: geometric(2.5e-5, 5),
                repeats: 3,
                noise: vec![],
                n: 600,
                ambient: Some(5000),
                alphas: vec![0.0, 0.5, 1.0],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return param("repeats must be at least 1");
        }
        if self.sweep.is_empty() {
            return param("sweep must not be empty");
        }
        if self.sweep.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return param("sweep values must be positive");
        }
        if self.sweep.windows(2).any(|w| w[0] >= w[1]) {
            return param("sweep values must be strictly increasing");
        }
        if self.sweep_kind == SweepKind::SampleSize && self.sweep.iter().any(|v| v.fract() != 0.0 || *v < 3.0) {
            return param("sample sizes must be integers of at least 3");
        }
        if !(self.epsilon > 0.0) {
            return param(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.dim == 0 {
            return param("dim must be at least 1");
        }
        if self.exponents.is_empty() && !matches!(self.experiment, ExperimentId::Fig1) {
            return param("at least one exponent is required");
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return param("alpha values must lie in [0, 1]");
        }
        Ok(())
    }

    fn point(&self, value: f64) -> (usize, f64) {
        match self.sweep_kind {
            SweepKind::SampleSize => (value as usize, self.epsilon),
            SweepKind::Bandwidth => (self.n, value),
        }
    }

    fn ambient_for(&self, n: usize) -> usize {
        self.ambient.unwrap_or(n)
    }
}

/// One line of the long-format result table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_param: String,
    pub sweep_value: f64,
    pub setting: String,
    pub method: String,
    pub statistic: String,
    pub value: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub meta: Vec<(String, String)>,
    pub rows: Vec<ResultRow>,
    /// Worst row or column sum deviation of any `W` built during the run.
    pub max_marginal_deviation: f64,
    pub max_scaling_residual: f64,
}

impl ResultTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "sweep_param",
            "sweep_value",
            "setting",
            "method",
            "statistic",
            "value",
            "note",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.sweep_param.clone(),
                r.sweep_value.to_string(),
                r.setting.clone(),
                r.method.clone(),
                r.statistic.clone(),
                r.value.to_string(),
                r.note.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Rows matching the given fields; `None` matches anything.
    pub fn select(&self, setting: Option<&str>, method: Option<&str>, statistic: Option<&str>) -> Vec<&ResultRow> {
        self.rows
            .iter()
            .filter(|r| setting.is_none_or(|s| r.setting == s))
            .filter(|r| method.is_none_or(|m| r.method == m))
            .filter(|r| statistic.is_none_or(|s| r.statistic == s))
            .collect()
    }

    /// The single value at a sweep point, if present.
    pub fn value(&self, sweep_value: f64, setting: &str, method: &str, statistic: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.sweep_value == sweep_value && r.setting == setting && r.method == method && r.statistic == statistic
            })
            .map(|r| r.value)
    }

    pub fn error_rows(&self) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.statistic == "error").collect()
    }
}

/// A scaled kernel with everything downstream steps reuse.
pub struct Scaled {
    pub sq_dists: Array2<f64>,
    pub kernel: AffinityMatrix,
    pub solution: ScalingSolution,
    pub w: DoublyStochastic,
}

/// Distances, kernel, converged scaling, and `W` for a point cloud.
pub fn scale_points(points: &Array2<f64>, epsilon: f64, opts: &ScalingOptions) -> Result<Scaled> {
    let sq_dists = pairwise_sq_dists(points)?;
    let kernel = gaussian_kernel(&sq_dists, epsilon)?;
    let solution = sinkhorn_symmetric_with(&kernel, opts)?;
    solution.ensure_converged()?;
    let w = assemble_W(&kernel, &solution)?;
    Ok(Scaled {
        sq_dists,
        kernel,
        solution,
        w,
    })
}

/// Samples the unit circle, embeds it in `R^m`, and adds noise.
pub fn circle_dataset(n: usize, m: usize, model: &NoiseModel, seed: u64) -> Result<(ManifoldSample, NoiseRealization)> {
    let s = sample_circle(n, CIRCLE_SIGMA_SQ, 1.0, seed)?;
    let s = embed_orthogonal(&s, m, seed)?;
    let noise = apply_noise(&s, model, seed)?;
    Ok((s, noise))
}

fn max_abs_error(est: &[f64], truth: &[f64]) -> f64 {
    est.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// A scalar produced by one repeat, before aggregation.
#[derive(Debug, Clone)]
struct Measurement {
    sweep_param: String,
    sweep_value: f64,
    setting: String,
    method: String,
    metric: String,
    value: f64,
}

struct Recorder<'a> {
    sweep_param: &'a str,
    sweep_value: f64,
    setting: String,
    out: Vec<Measurement>,
    max_dev: f64,
    max_res: f64,
}

impl<'a> Recorder<'a> {
    fn new(sweep_param: &'a str, sweep_value: f64, setting: impl Into<String>) -> Self {
        Self {
            sweep_param,
            sweep_value,
            setting: setting.into(),
            out: Vec::new(),
            max_dev: 0.0,
            max_res: 0.0,
        }
    }

    fn put(&mut self, method: impl Into<String>, metric: impl Into<String>, value: f64) {
        self.out.push(Measurement {
            sweep_param: self.sweep_param.to_string(),
            sweep_value: self.sweep_value,
            setting: self.setting.clone(),
            method: method.into(),
            metric: metric.into(),
            value,
        });
    }

    fn put_at(&mut self, param: &str, value_at: f64, method: impl Into<String>, metric: impl Into<String>, value: f64) {
        self.out.push(Measurement {
            sweep_param: param.to_string(),
            sweep_value: value_at,
            setting: self.setting.clone(),
            method: method.into(),
            metric: metric.into(),
            value,
        });
    }

    fn track(&mut self, s: &Scaled) {
        self.max_dev = self.max_dev.max(s.w.max_marginal_deviation());
        self.max_res = self.max_res.max(s.solution.residual);
    }
}

fn method_name(e: Exponent) -> String {
    format!("ds_kde_s{e}")
}

fn density_repeat(
    rec: &mut Recorder,
    cfg: &ExperimentConfig,
    n: usize,
    eps: f64,
    model: &NoiseModel,
    seed: u64,
) -> Result<()> {
    let (sample, noise) = circle_dataset(n, cfg.ambient_for(n), model, seed)?;
    let sc = scale_points(&noise.noisy_points, eps, &ScalingOptions::simulation())?;
    rec.track(&sc);
    let truth = &sample.density_values;
    let kde_c = kde_constant(eps, cfg.dim);
    let kde: Vec<f64> = standard_kde(&sc.kernel).iter().map(|v| v / kde_c).collect();
    rec.put("kde", "max_error", max_abs_error(&kde, truth));
    for &e in &cfg.exponents {
        let est = estimate_density(&sc.w, e)?.with_dim(cfg.dim)?;
        let q = est.normalized.as_ref().expect("dimension supplied");
        rec.put(method_name(e), "max_error", max_abs_error(q, truth));
    }
    Ok(())
}

fn fig1_repeat(
    rec: &mut Recorder,
    cfg: &ExperimentConfig,
    n: usize,
    eps: f64,
    model: &NoiseModel,
    seed: u64,
) -> Result<()> {
    let (sample, noise) = circle_dataset(n, cfg.ambient_for(n), model, seed)?;
    let sc = scale_points(&noise.noisy_points, eps, &ScalingOptions::simulation())?;
    rec.track(&sc);
    let truth = &sample.density_values;
    let kde_c = kde_constant(eps, cfg.dim);
    let kde: Vec<f64> = standard_kde(&sc.kernel).iter().map(|v| v / kde_c).collect();
    let mut series = vec![("kde".to_string(), kde)];
    for &e in &cfg.exponents {
        let est = estimate_density(&sc.w, e)?.with_dim(cfg.dim)?;
        series.push((method_name(e), est.normalized.expect("dimension supplied")));
    }
    for (name, est) in &series {
        let err: Vec<f64> = est.iter().zip(truth).map(|(a, b)| (a - b).abs()).collect();
        rec.put(name.as_str(), "max_error", err.iter().cloned().fold(0.0, f64::max));
        rec.put(name.as_str(), "mean_error", mean(&err));
        rec.put(name.as_str(), "pearson_with_truth", pearson(est, truth));
    }
    Ok(())
}

/// Replicates the `N̂` computation with `q̂ ≡ 1`.
fn noise_without_density(sol: &ScalingSolution, eps: f64) -> Vec<f64> {
    let half = 0.5 * ((sol.n() - 1) as f64).ln();
    sol.log_d.iter().map(|ld| eps * (ld + half)).collect()
}

fn fig4_repeat(
    rec: &mut Recorder,
    cfg: &ExperimentConfig,
    n: usize,
    eps: f64,
    model: &NoiseModel,
    seed: u64,
) -> Result<()> {
    let per = n / 2;
    let s = sample_concentric_circles(per, CIRCLE_SIGMA_SQ, &[1.0, 0.5], seed)?;
    let s = embed_orthogonal(&s, cfg.ambient_for(n), seed)?;
    let noise = apply_noise(&s, model, seed)?;
    let sc = scale_points(&noise.noisy_points, eps, &ScalingOptions::simulation())?;
    rec.track(&sc);
    let truth = &noise.true_noise_sq;
    for &e in &cfg.exponents {
        let est = estimate_density(&sc.w, e)?;
        let table = estimate_table(&noise.noisy_points, Some(&sc.sq_dists), &sc.solution, &sc.w, &est, None)?;
        let name = method_name(e);
        let diff: Vec<f64> = table.noise_sq_hat.iter().zip(truth).map(|(a, b)| a - b).collect();
        rec.put(name.as_str(), "noise_shift", mean(&diff));
        rec.put(
            name.as_str(),
            "noise_max_abs_dev",
            diff.iter().map(|d| (d - mean(&diff)).abs()).fold(0.0, f64::max),
        );
        rec.put(name.as_str(), "noise_spearman", spearman(&table.noise_sq_hat, truth));
        rec.put(
            name.as_str(),
            "noise_bias_theory",
            crate::inference::noise_bias(eps, cfg.dim, e),
        );
        for (r, label) in [(1.0, "signal_mean_r1"), (0.5, "signal_mean_r0.5")] {
            let band: Vec<f64> = (0..s.len())
                .filter(|&i| s.radius_labels[i] == r)
                .map(|i| table.signal_sq_hat[i])
                .collect();
            rec.put(name.as_str(), label, mean(&band));
            rec.put(name.as_str(), format!("{label}_std"), std_dev(&band));
        }
    }
    let flat = noise_without_density(&sc.solution, eps);
    rec.put("no_density", "noise_spearman", spearman(&flat, truth));
    let noisy_norms = crate::geometry::row_sq_norms(&noise.noisy_points);
    rec.put(
        "noisy_norm",
        "signal_spearman_with_clean",
        spearman(noisy_norms.as_slice().expect("contiguous"), &s.sq_norms()),
    );
    Ok(())
}

fn fig6_repeat(
    rec: &mut Recorder,
    cfg: &ExperimentConfig,
    n: usize,
    eps: f64,
    model: &NoiseModel,
    seed: u64,
) -> Result<()> {
    let (sample, noise) = circle_dataset(n, cfg.ambient_for(n), model, seed)?;
    let sc = scale_points(&noise.noisy_points, eps, &ScalingOptions::simulation())?;
    rec.track(&sc);
    let clean = pairwise_sq_dists(&sample.clean_points)?;
    let e = cfg.exponents[0];
    let est = estimate_density(&sc.w, e)?;
    let table = estimate_table(&noise.noisy_points, Some(&sc.sq_dists), &sc.solution, &sc.w, &est, None)?;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += table.corrected_dists[[i, j]] - clean[[i, j]];
            }
        }
    }
    let name = method_name(e);
    rec.put(name.as_str(), "distance_bias", total / (n * (n - 1)) as f64);
    rec.put(
        name.as_str(),
        "distance_bias_theory",
        -2.0 * crate::inference::noise_bias(eps, cfg.dim, e),
    );
    rec.put(name.as_str(), "negative_pairs", table.negative_pairs as f64);
    let k_max = cfg.k_max.min(n - 1);
    let corrected = knn_recovery_accuracy(&table.corrected_dists, &clean, k_max)?;
    let noisy = knn_recovery_accuracy(&sc.sq_dists, &clean, k_max)?;
    for k in 0..k_max {
        rec.put_at("k", (k + 1) as f64, "corrected", "knn_accuracy", corrected[k]);
        rec.put_at("k", (k + 1) as f64, "noisy", "knn_accuracy", noisy[k]);
    }
    Ok(())
}

fn fig7_repeat(
    rec: &mut Recorder,
    cfg: &ExperimentConfig,
    n: usize,
    eps: f64,
    model: &NoiseModel,
    seed: u64,
) -> Result<()> {
    let (sample, noise) = circle_dataset(n, cfg.ambient_for(n), model, seed)?;
    let sc = scale_points(&noise.noisy_points, eps, &ScalingOptions::simulation())?;
    rec.track(&sc);
    let (f, _) = test_function_and_laplacian(&sample.angles);
    let e = cfg.exponents[0];
    let est = estimate_density(&sc.w, e)?;
    for &alpha in &cfg.alphas {
        let reference = crate::laplacian::circle_operator_reference(&sample.angles, alpha, CIRCLE_SIGMA_SQ)?;
        let robust = robust_markov(&sc.w, &est, alpha)?;
        rec.put(
            format!("robust_a{alpha}"),
            "max_error",
            operator_error(&robust, &f, &reference)?,
        );
        drop(robust);
        let trad = traditional_markov(&sc.kernel, alpha)?;
        rec.put(
            format!("traditional_a{alpha}"),
            "max_error",
            operator_error(&trad, &f, &reference)?,
        );
    }
    Ok(())
}

/// Outputs of the count pipeline at one bandwidth.
pub struct CountsRun {
    pub noise_sq_hat: Vec<f64>,
    pub predicted: Vec<f64>,
    pub scaled: Scaled,
    pub density: DensityEstimate,
}

/// Normalizes counts, scales with the count profile, and estimates `N̂`.
pub fn counts_pipeline(counts: &crate::counts::CountMatrix, eps: f64, exponent: Exponent) -> Result<CountsRun> {
    let (y, predicted) = normalize_counts(counts);
    let scaled = scale_points(&y, eps, &ScalingOptions::counts())?;
    let density = estimate_density(&scaled.w, exponent)?;
    let noise_sq_hat = noise_magnitude(&scaled.solution, &density, eps)?;
    Ok(CountsRun {
        noise_sq_hat,
        predicted,
        scaled,
        density,
    })
}

/// Synthetic model used by the count experiment: six clusters with depths
/// spread over a factor of ten.
pub fn default_count_model() -> LatentClusters {
    LatentClusters::heteroskedastic(6, 500.0)
}

fn fig8_repeat(rec: &mut Recorder, cfg: &ExperimentConfig, n: usize, eps: f64, seed: u64) -> Result<()> {
    let synth = synth_poisson_counts(n, cfg.ambient_for(n), &default_count_model(), seed)?;
    let run = counts_pipeline(&synth.counts, eps, cfg.exponents[0])?;
    rec.track(&run.scaled);
    rec.put(
        "ds_kde",
        "pearson_noise_vs_inv_count",
        pearson(&run.noise_sq_hat, &run.predicted),
    );
    rec.put(
        "ds_kde",
        "spearman_noise_vs_inv_count",
        spearman(&run.noise_sq_hat, &run.predicted),
    );
    let ratio: Vec<f64> = run
        .noise_sq_hat
        .iter()
        .zip(&run.predicted)
        .map(|(a, b)| a / b)
        .collect();
    rec.put(
        "ds_kde",
        "median_ratio_noise_to_inv_count",
        crate::numerics::median(&ratio),
    );
    for &alpha in &cfg.alphas {
        let robust = robust_markov(&run.scaled.w, &run.density, alpha)?;
        let (m, w) = transition_error(&robust, &synth.cluster)?;
        rec.put(format!("robust_a{alpha}"), "mean_transition", m);
        rec.put(format!("robust_a{alpha}"), "worst_transition", w);
        drop(robust);
        let trad = traditional_markov(&run.scaled.kernel, alpha)?;
        let (m, w) = transition_error(&trad, &synth.cluster)?;
        rec.put(format!("traditional_a{alpha}"), "mean_transition", m);
        rec.put(format!("traditional_a{alpha}"), "worst_transition", w);
    }
    Ok(())
}

fn run_repeat(
    rec: &mut Recorder,
    cfg: &ExperimentConfig,
    n: usize,
    eps: f64,
    model: Option<&NoiseModel>,
    seed: u64,
) -> Result<()> {
    let none = NoiseModel::None;
    let model = model.unwrap_or(&none);
    match cfg.experiment {
        ExperimentId::Fig1 => fig1_repeat(rec, cfg, n, eps, model, seed),
        ExperimentId::Fig3 | ExperimentId::Fig5 => density_repeat(rec, cfg, n, eps, model, seed),
        ExperimentId::Fig4 => fig4_repeat(rec, cfg, n, eps, model, seed),
        ExperimentId::Fig6 => fig6_repeat(rec, cfg, n, eps, model, seed),
        ExperimentId::Fig7 => fig7_repeat(rec, cfg, n, eps, model, seed),
        ExperimentId::Fig8Synthetic => fig8_repeat(rec, cfg, n, eps, seed),
    }
}

/// Runs every sweep point and repeat, then reduces repeats to mean and
/// standard deviation rows. A failing sweep point yields an `error` row.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let settings: Vec<Option<NoiseModel>> = if cfg.noise.is_empty() {
        vec![None]
    } else {
        cfg.noise.iter().copied().map(Some).collect()
    };
    let mut table = ResultTable {
        meta: vec![
            ("experiment".into(), cfg.experiment.to_string()),
            ("dsnorm_version".into(), crate::VERSION.into()),
            ("seed".into(), cfg.seed.to_string()),
            ("repeats".into(), cfg.repeats.to_string()),
            ("sweep".into(), format!("{}={:?}", cfg.sweep_kind.name(), cfg.sweep)),
            ("epsilon".into(), cfg.epsilon.to_string()),
            ("n".into(), cfg.n.to_string()),
            (
                "ambient".into(),
                cfg.ambient.map(|m| m.to_string()).unwrap_or_else(|| "n".into()),
            ),
            (
                "exponents".into(),
                cfg.exponents
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            ("dim".into(), cfg.dim.to_string()),
            (
                "alphas".into(),
                cfg.alphas.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(";"),
            ),
        ],
        ..Default::default()
    };
    let param_name = cfg.sweep_kind.name();
    for (si, &value) in cfg.sweep.iter().enumerate() {
        let (n, eps) = cfg.point(value);
        for setting in &settings {
            let tag = setting
                .map(|m| m.tag().to_string())
                .unwrap_or_else(|| "poisson_counts".into());
            let mut measurements: Vec<Vec<Measurement>> = Vec::with_capacity(cfg.repeats);
            let mut failure = None;
            for r in 0..cfg.repeats {
                let seed = derive_seed(cfg.seed, (si * 1_000_003 + r) as u64);
                let mut rec = Recorder::new(param_name, value, tag.clone());
                match run_repeat(&mut rec, cfg, n, eps, setting.as_ref(), seed) {
                    Ok(()) => {
                        table.max_marginal_deviation = table.max_marginal_deviation.max(rec.max_dev);
                        table.max_scaling_residual = table.max_scaling_residual.max(rec.max_res);
                        measurements.push(rec.out);
                    }
                    Err(e) => {
                        failure = Some((r, e));
                        break;
                    }
                }
            }
            if let Some((r, e)) = failure {
                table.rows.push(ResultRow {
                    sweep_param: param_name.into(),
                    sweep_value: value,
                    setting: tag.clone(),
                    method: e.kind().into(),
                    statistic: "error".into(),
                    value: f64::NAN,
                    note: format!("repeat {r}: {e}"),
                });
                continue;
            }
            aggregate(&measurements, &mut table.rows);
        }
    }
    table.meta.push((
        "max_scaling_residual".into(),
        format!("{:e}", table.max_scaling_residual),
    ));
    table.meta.push((
        "max_marginal_deviation".into(),
        format!("{:e}", table.max_marginal_deviation),
    ));
    if let Some(path) = &cfg.out {
        let f = std::fs::File::create(path)?;
        table.write_csv(std::io::BufWriter::new(f))?;
    }
    Ok(table)
}

fn aggregate(repeats: &[Vec<Measurement>], rows: &mut Vec<ResultRow>) {
    let Some(first) = repeats.first() else { return };
    for (idx, m) in first.iter().enumerate() {
        let vals: Vec<f64> = repeats.iter().map(|r| r[idx].value).collect();
        let base = ResultRow {
            sweep_param: m.sweep_param.clone(),
            sweep_value: m.sweep_value,
            setting: m.setting.clone(),
            method: m.method.clone(),
            statistic: format!("{}_mean", m.metric),
            value: mean(&vals),
            note: String::new(),
        };
        let sd = if vals.len() > 1 { std_dev(&vals) } else { 0.0 };
        rows.push(ResultRow {
            statistic: format!("{}_std", m.metric),
            value: sd,
            ..base.clone()
        });
        rows.insert(rows.len() - 1, base);
    }
}

/// `(πε)^{d/2}`, the constant dividing the standard KDE.
pub fn kde_constant(epsilon: f64, dim: usize) -> f64 {
    (std::f64::consts::PI * epsilon).powf(dim as f64 / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: ExperimentId) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(id);
        c.repeats = 2;
        c.n = 120;
        c.sweep = match c.sweep_kind {
            SweepKind::SampleSize => vec![100.0, 160.0],
            SweepKind::Bandwidth => vec![0.1, 0.2],
        };
        if id == ExperimentId::Fig8Synthetic {
            c.sweep = vec![2e-4, 4e-4];
            c.ambient = Some(400);
        }
        c.k_max = 10;
        c
    }

    #[test]
    fn ids_round_trip_through_strings() {
        for id in ExperimentId::ALL {
            assert_eq!(id.to_string().parse::<ExperimentId>().unwrap(), id);
        }
        assert!("fig2".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ExperimentConfig::new(ExperimentId::Fig3);
        c.repeats = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(ExperimentId::Fig3);
        c.sweep = vec![1000.0, 500.0];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::new(ExperimentId::Fig5);
        c.sweep = vec![-0.1];
        assert!(c.validate().is_err());
    }

    #[test]
    fn every_experiment_runs_at_small_scale() {
        for id in ExperimentId::ALL {
            let t = run_experiment(&small(id)).unwrap();
            assert!(t.error_rows().is_empty(), "{id}: {:?}", t.error_rows());
            assert!(!t.rows.is_empty());
            assert!(t.max_marginal_deviation <= 1e-6, "{id}");
            let csv = t.to_csv_string().unwrap();
            assert!(csv.starts_with("# experiment="));
            assert!(csv.contains("max_scaling_residual"));
        }
    }

    #[test]
    fn fixed_seed_is_byte_identical() {
        let mut c = small(ExperimentId::Fig3);
        c.repeats = 1;
        let a = run_experiment(&c).unwrap().to_csv_string().unwrap();
        let b = run_experiment(&c).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failures_become_error_rows() {
        let mut c = small(ExperimentId::Fig3);
        c.ambient = Some(1);
        c.repeats = 1;
        let t = run_experiment(&c).unwrap();
        assert!(!t.error_rows().is_empty());
        assert!(t.error_rows()[0].note.contains("repeat 0"));
    }
}
