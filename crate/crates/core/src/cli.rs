//! Command-line interface.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::counts::{ingest_counts, read_labels, subsample_per_class, CountFormat};
use crate::density::{estimate_density, Exponent};
use crate::error::{Error, Result};
use crate::geometry::{
    apply_noise, embed_orthogonal, sample_circle, sample_concentric_circles, test_function_and_laplacian, NoiseModel,
};
use crate::harness::{
    counts_pipeline, kde_constant, run_experiment, scale_points, ExperimentConfig, ExperimentId, SweepKind,
    CIRCLE_SIGMA_SQ,
};
use crate::inference::estimate_table;
use crate::io::{read_points_csv, read_sidecar_csv, write_points_csv, write_sidecar_csv};
use crate::kernel::standard_kde;
use crate::laplacian::{
    circle_operator_reference, operator_error, robust_markov, traditional_markov, transition_error, Family,
};
use crate::scaling::ScalingOptions;

/// Environment variable that fixes the worker thread count.
pub const THREADS_ENV: &str = "DSNORM_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "dsnorm",
    version,
    about = "Doubly stochastic Gaussian kernel normalization and robust inference"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample noisy points on the unit circle (or two concentric circles).
    Simulate(SimulateArgs),
    /// Scale the Gaussian kernel of a point cloud to a doubly stochastic matrix.
    Scale(ScaleArgs),
    /// Standard and doubly stochastic kernel density estimates.
    Density(DensityArgs),
    /// Noise magnitudes, signal magnitudes, and corrected distances.
    Denoise(DenoiseArgs),
    /// Graph Laplacian errors on the circle test function.
    Laplacian(LaplacianArgs),
    /// Count-matrix pipeline: Poisson noise check and transition errors.
    Scrna(ScrnaArgs),
    /// Run a figure experiment and write its result table.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Profile {
    Simulation,
    Counts,
}

impl Profile {
    fn options(self) -> ScalingOptions {
        match self {
            Profile::Simulation => ScalingOptions::simulation(),
            Profile::Counts => ScalingOptions::counts(),
        }
    }
}

#[derive(Args, Debug)]
pub struct ScalingFlags {
    /// Scaling tolerance (defaults to the profile value).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Scaling iteration cap (defaults to the profile value).
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, value_enum, default_value = "simulation")]
    pub profile: Profile,
}

impl ScalingFlags {
    fn options(&self) -> ScalingOptions {
        let mut o = self.profile.options();
        if let Some(t) = self.tol {
            o = o.with_tol(t);
        }
        if let Some(m) = self.max_iter {
            o = o.with_max_iter(m);
        }
        o
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Ambient dimension (defaults to n).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value = "none")]
    pub noise: NoiseModel,
    /// Sample two concentric circles of radii 1 and 0.5, n/2 points each.
    #[arg(long)]
    pub two_circles: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noisy points CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-point ground truth CSV.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScaleArgs {
    /// Points CSV, one row per point.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    #[command(flatten)]
    pub scaling: ScalingFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DensityArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    /// Exponent s, or `limit` for the perplexity form.
    #[arg(long, default_value = "2")]
    pub s: Exponent,
    /// Intrinsic dimension used for normalization.
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    /// Ground truth CSV with a `true_density` column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub scaling: ScalingFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value = "2")]
    pub s: Exponent,
    /// Intrinsic dimension; required with --debias.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Subtract the leading-order bias constant from the noise estimates.
    #[arg(long)]
    pub debias: bool,
    /// Ground truth CSV with a `true_noise_sq` column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub scaling: ScalingFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the full corrected distance matrix here.
    #[arg(long)]
    pub dists_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum FamilyArg {
    Robust,
    Traditional,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TestFunction {
    PaperCircle,
}

#[derive(Args, Debug)]
pub struct LaplacianArgs {
    /// Points CSV; when absent a circle sample is simulated.
    #[arg(long, requires = "truth")]
    pub input: Option<PathBuf>,
    /// Ground truth CSV with an `angle` column.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value = "none")]
    pub noise: NoiseModel,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, conflicts_with = "epsilon_sweep")]
    pub epsilon: Option<f64>,
    /// Comma-separated bandwidths.
    #[arg(long, value_delimiter = ',')]
    pub epsilon_sweep: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "both")]
    pub family: FamilyArg,
    #[arg(long, value_enum, default_value = "paper-circle")]
    pub test_function: TestFunction,
    #[arg(long, default_value = "2")]
    pub s: Exponent,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScrnaArgs {
    /// Matrix-market (.mtx) or dense CSV count matrix, one row per cell.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub format: Option<CountFormat>,
    /// The file stores genes as rows.
    #[arg(long)]
    pub genes_by_cells: bool,
    /// One label per cell.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value = "2")]
    pub s: Exponent,
    /// Cells drawn per label; 0 keeps every cell.
    #[arg(long, default_value_t = 500)]
    pub subsample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
    pub alphas: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Transition error table (requires --labels).
    #[arg(long)]
    pub transitions_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// fig1, fig3, fig4, fig5, fig6, fig7 or fig8-synthetic.
    pub figure: ExperimentId,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Comma-separated sweep values (n or ε depending on the figure).
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Comma-separated exponents.
    #[arg(long, value_delimiter = ',')]
    pub s: Option<Vec<Exponent>>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub noise: Option<Vec<NoiseModel>>,
    #[arg(long)]
    pub k_max: Option<usize>,
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn Write>>> {
    Ok(csv::Writer::from_writer(sink(path)?))
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let m = a.m.unwrap_or(a.n);
    let sample = if a.two_circles {
        sample_concentric_circles(a.n / 2, CIRCLE_SIGMA_SQ, &[1.0, 0.5], a.seed)?
    } else {
        sample_circle(a.n, CIRCLE_SIGMA_SQ, 1.0, a.seed)?
    };
    let sample = embed_orthogonal(&sample, m, a.seed)?;
    let noise = apply_noise(&sample, &a.noise, a.seed)?;
    match &a.out {
        Some(p) => write_points_csv(p, &noise.noisy_points)?,
        None => {
            let mut w = csv_writer(None)?;
            for row in noise.noisy_points.rows() {
                w.write_record(row.iter().map(|v| format!("{v:e}")))?;
            }
            w.flush()?;
        }
    }
    if let Some(p) = &a.truth {
        write_sidecar_csv(p, &sample, Some(&noise))?;
    }
    Ok(())
}

fn scale(a: &ScaleArgs) -> Result<()> {
    let pts = read_points_csv(&a.input)?;
    let sc = scale_points(&pts, a.epsilon, &a.scaling.options())?;
    eprintln!(
        "converged iterations={} residual={:e} marginal_deviation={:e}",
        sc.solution.iterations,
        sc.solution.residual,
        sc.w.max_marginal_deviation()
    );
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["index", "log_d", "d"])?;
    for (i, ld) in sc.solution.log_d.iter().enumerate() {
        w.write_record([i.to_string(), ld.to_string(), ld.exp().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn density(a: &DensityArgs) -> Result<()> {
    let pts = read_points_csv(&a.input)?;
    let sc = scale_points(&pts, a.epsilon, &a.scaling.options())?;
    let est = estimate_density(&sc.w, a.s)?.with_dim(a.dim)?;
    let kde_c = kde_constant(a.epsilon, a.dim);
    let kde = standard_kde(&sc.kernel);
    let truth = match &a.truth {
        Some(p) => Some(read_sidecar_csv(p)?.true_density),
        None => None,
    };
    if let Some(t) = &truth {
        if t.len() != pts.nrows() {
            return Err(Error::Dimension("truth file length differs from the points".into()));
        }
    }
    let mut w = csv_writer(a.out.as_deref())?;
    let mut header = vec!["index", "kde", "ds_kde_raw", "ds_kde"];
    if truth.is_some() {
        header.push("true_density");
    }
    w.write_record(&header)?;
    let normalized = est.normalized.as_ref().expect("dimension supplied");
    for i in 0..pts.nrows() {
        let mut rec = vec![
            i.to_string(),
            (kde[i] / kde_c).to_string(),
            est.raw[i].to_string(),
            normalized[i].to_string(),
        ];
        if let Some(t) = &truth {
            rec.push(t[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn denoise(a: &DenoiseArgs) -> Result<()> {
    if a.debias && a.dim.is_none() {
        return Err(Error::Parameter("--debias requires --dim".into()));
    }
    let pts = read_points_csv(&a.input)?;
    let sc = scale_points(&pts, a.epsilon, &a.scaling.options())?;
    let est = estimate_density(&sc.w, a.s)?;
    let table = estimate_table(
        &pts,
        Some(&sc.sq_dists),
        &sc.solution,
        &sc.w,
        &est,
        if a.debias { a.dim } else { None },
    )?;
    let truth = match &a.truth {
        Some(p) => Some(read_sidecar_csv(p)?),
        None => None,
    };
    let mut w = csv_writer(a.out.as_deref())?;
    let mut header = vec!["index", "noise_sq_hat", "signal_sq_hat"];
    if truth.is_some() {
        header.extend(["true_noise_sq", "true_signal_sq"]);
    }
    w.write_record(&header)?;
    for i in 0..pts.nrows() {
        let mut rec = vec![
            i.to_string(),
            table.noise_sq_hat[i].to_string(),
            table.signal_sq_hat[i].to_string(),
        ];
        if let Some(t) = &truth {
            rec.push(t.true_noise_sq.get(i).map(|v| v.to_string()).unwrap_or_default());
            rec.push(t.radius.get(i).map(|r| (r * r).to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    if let Some(p) = &a.dists_out {
        let mut dw = csv::Writer::from_path(p)?;
        for row in table.corrected_dists.rows() {
            dw.write_record(
                row.iter()
                    .map(|v| if v.is_nan() { String::new() } else { v.to_string() }),
            )?;
        }
        dw.flush()?;
    }
    if table.negative_pairs > 0 {
        eprintln!("negative corrected distances: {} pairs", table.negative_pairs);
    }
    Ok(())
}

fn laplacian(a: &LaplacianArgs) -> Result<()> {
    let (points, angles) = match &a.input {
        Some(p) => {
            let pts = read_points_csv(p)?;
            let side = read_sidecar_csv(a.truth.as_ref().expect("clap enforces --truth"))?;
            if side.angle.len() != pts.nrows() {
                return Err(Error::Dimension("truth file needs one angle per point".into()));
            }
            (pts, side.angle)
        }
        None => {
            let (s, noise) = crate::harness::circle_dataset(a.n, a.m.unwrap_or(a.n), &a.noise, a.seed)?;
            (noise.noisy_points, s.angles)
        }
    };
    let TestFunction::PaperCircle = a.test_function;
    let (f, _) = test_function_and_laplacian(&angles);
    let reference = circle_operator_reference(&angles, a.alpha, CIRCLE_SIGMA_SQ)?;
    let eps_list = match (&a.epsilon, &a.epsilon_sweep) {
        (Some(e), _) => vec![*e],
        (None, Some(v)) => v.clone(),
        (None, None) => vec![0.1],
    };
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["epsilon", "n", "family", "alpha", "max_error"])?;
    for eps in eps_list {
        let sc = scale_points(&points, eps, &ScalingOptions::simulation())?;
        let mut emit = |fam: Family, err: f64| -> Result<()> {
            w.write_record([
                eps.to_string(),
                points.nrows().to_string(),
                fam.to_string(),
                a.alpha.to_string(),
                err.to_string(),
            ])?;
            Ok(())
        };
        if a.family != FamilyArg::Traditional {
            let est = estimate_density(&sc.w, a.s)?;
            let fam = robust_markov(&sc.w, &est, a.alpha)?;
            emit(Family::Robust, operator_error(&fam, &f, &reference)?)?;
        }
        if a.family != FamilyArg::Robust {
            let fam = traditional_markov(&sc.kernel, a.alpha)?;
            emit(Family::Traditional, operator_error(&fam, &f, &reference)?)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn scrna(a: &ScrnaArgs) -> Result<()> {
    let format = a.format.unwrap_or_else(|| CountFormat::from_path(&a.input));
    let mut counts = ingest_counts(&a.input, format, a.genes_by_cells)?;
    if let Some(p) = &a.labels {
        counts = counts.with_labels(read_labels(p)?)?;
    }
    if a.subsample > 0 {
        if let Some(labels) = &counts.labels {
            let idx = subsample_per_class(labels, a.subsample, a.seed);
            counts = counts.select_rows(&idx)?;
        }
    }
    let run = counts_pipeline(&counts, a.epsilon, a.s)?;
    eprintln!(
        "cells={} genes={} residual={:e}",
        counts.n_rows(),
        counts.n_cols(),
        run.scaled.solution.residual
    );
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(["index", "label", "total_count", "inv_count", "noise_sq_hat"])?;
    for i in 0..counts.n_rows() {
        let label = counts.labels.as_ref().map(|l| l[i].clone()).unwrap_or_default();
        w.write_record([
            i.to_string(),
            label,
            counts.totals()[i].to_string(),
            run.predicted[i].to_string(),
            run.noise_sq_hat[i].to_string(),
        ])?;
    }
    w.flush()?;
    if let Some(p) = &a.transitions_out {
        let labels = counts
            .labels
            .as_ref()
            .ok_or_else(|| Error::Parameter("--transitions-out requires --labels".into()))?;
        let mut tw = csv::Writer::from_path(p)?;
        tw.write_record(["epsilon", "family", "alpha", "mean_transition", "worst_transition"])?;
        for &alpha in &a.alphas {
            let fams = [
                robust_markov(&run.scaled.w, &run.density, alpha)?,
                traditional_markov(&run.scaled.kernel, alpha)?,
            ];
            for fam in fams {
                let (m, worst) = transition_error(&fam, labels)?;
                tw.write_record([
                    a.epsilon.to_string(),
                    fam.source_tag.to_string(),
                    alpha.to_string(),
                    m.to_string(),
                    worst.to_string(),
                ])?;
            }
        }
        tw.flush()?;
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::new(a.figure);
    cfg.seed = a.seed;
    if let Some(r) = a.repeats {
        cfg.repeats = r;
    }
    if let Some(s) = &a.sweep {
        cfg.sweep = s.clone();
    }
    if let Some(n) = a.n {
        cfg.n = n;
        if cfg.sweep_kind == SweepKind::SampleSize && a.sweep.is_none() {
            cfg.sweep = vec![n as f64];
        }
    }
    if let Some(m) = a.m {
        cfg.ambient = Some(m);
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    if let Some(s) = &a.s {
        cfg.exponents = s.clone();
    }
    if let Some(al) = &a.alphas {
        cfg.alphas = al.clone();
    }
    if let Some(noise) = &a.noise {
        cfg.noise = noise.clone();
    }
    if let Some(k) = a.k_max {
        cfg.k_max = k;
    }
    let table = run_experiment(&cfg)?;
    match &a.out {
        Some(p) => {
            let f = File::create(p)?;
            table.write_csv(BufWriter::new(f))?;
        }
        None => table.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

/// Executes a parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Scale(a) => scale(a),
        Command::Density(a) => density(a),
        Command::Denoise(a) => denoise(a),
        Command::Laplacian(a) => laplacian(a),
        Command::Scrna(a) => scrna(a),
        Command::Bench(a) => bench(a),
    }
}

/// One-line error report: `error kind=<kind> message="<text>"`.
pub fn error_line(e: &Error) -> String {
    let msg = e
        .to_string()
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', " ");
    format!("error kind={} message=\"{msg}\"", e.kind())
}

/// Applies the thread-count override, if set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Parameter(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Parameter(format!("{THREADS_ENV} must be positive")));
        }
        // A pool may already exist in tests; the override then has no effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match configure_threads().and_then(|_| execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}
