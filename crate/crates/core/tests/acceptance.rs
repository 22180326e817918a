//! End-to-end acceptance checks at the desk scale used throughout the
//! project. Each test prints one `criterion N: PASS|FAIL ...` line to stderr
//! whether or not output capture is on.

#![allow(clippy::needless_range_loop)]

use std::io::Write;
use std::sync::OnceLock;

use dsnorm::density::{ds_kde, ds_kde_entropy, estimate_density, solve_population_scaling_1d, Exponent};
use dsnorm::geometry::{wrapped_normal_density, NoiseModel};
use dsnorm::harness::{
    circle_dataset, run_experiment, scale_points, ExperimentConfig, ExperimentId, ResultTable, CIRCLE_SIGMA_SQ,
};
use dsnorm::inference::{corrected_dists_from_w, estimate_table, max_offdiag_diff};
use dsnorm::kernel::{gaussian_kernel, pairwise_sq_dists, AffinityMatrix};
use dsnorm::laplacian::{apply_laplacian, robust_markov, traditional_markov, Family};
use dsnorm::numerics::log_log_slope;
use dsnorm::scaling::{assemble_W, sinkhorn_symmetric_with, DoublyStochastic, Initialization, ScalingOptions};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: usize, pass: bool, detail: impl AsRef<str>) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr().lock(),
        "criterion {id}: {verdict} {}",
        detail.as_ref()
    );
    assert!(pass, "criterion {id} failed: {}", detail.as_ref());
}

fn density_sweep() -> &'static ResultTable {
    static T: OnceLock<ResultTable> = OnceLock::new();
    T.get_or_init(|| {
        let cfg = ExperimentConfig {
            sweep: vec![500.0, 1000.0, 2000.0],
            exponents: vec![Exponent::Power(2.0)],
            ..ExperimentConfig::new(ExperimentId::Fig3)
        };
        run_experiment(&cfg).unwrap()
    })
}

fn knn_run() -> &'static ResultTable {
    static T: OnceLock<ResultTable> = OnceLock::new();
    T.get_or_init(|| run_experiment(&ExperimentConfig::new(ExperimentId::Fig6)).unwrap())
}

fn laplacian_run() -> &'static ResultTable {
    static T: OnceLock<ResultTable> = OnceLock::new();
    T.get_or_init(|| run_experiment(&ExperimentConfig::new(ExperimentId::Fig7)).unwrap())
}

fn counts_run() -> &'static ResultTable {
    static T: OnceLock<ResultTable> = OnceLock::new();
    T.get_or_init(|| run_experiment(&ExperimentConfig::new(ExperimentId::Fig8Synthetic)).unwrap())
}

fn get(t: &ResultTable, x: f64, setting: &str, method: &str, statistic: &str) -> f64 {
    t.value(x, setting, method, statistic)
        .unwrap_or_else(|| panic!("missing {setting}/{method}/{statistic} at {x}"))
}

fn no_error_rows(t: &ResultTable) -> bool {
    t.error_rows().is_empty()
}

/// Newton's method on `log d` for `d_i Σ_{j≠i} K_ij d_j = 1`, with an analytic
/// Jacobian and step halving.
fn newton_log_scaling(k: &Array2<f64>) -> Vec<f64> {
    let n = k.nrows();
    let resid = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let s: f64 = (0..n).filter(|&j| j != i).map(|j| k[[i, j]] * x[j].exp()).sum();
                x[i].exp() * s - 1.0
            })
            .collect()
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    for _ in 0..100 {
        let r = resid(&x);
        if norm(&r) < 1e-15 {
            break;
        }
        let d: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let mut a = vec![vec![0.0; n + 1]; n];
        for i in 0..n {
            for c in 0..n {
                a[i][c] = if c == i { r[i] + 1.0 } else { d[i] * k[[i, c]] * d[c] };
            }
            a[i][n] = -r[i];
        }
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for row in 0..n {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    for c in col..=n {
                        a[row][c] -= f * a[col][c];
                    }
                }
            }
        }
        let step: Vec<f64> = (0..n).map(|i| a[i][n] / a[i][i]).collect();
        let mut t = 1.0;
        while t > 1e-10 {
            let cand: Vec<f64> = x.iter().zip(&step).map(|(v, s)| v + t * s).collect();
            if norm(&resid(&cand)) < norm(&r) {
                x = cand;
                break;
            }
            t *= 0.5;
        }
    }
    x
}

#[test]
fn c01_scaling_correctness() {
    let mut notes = Vec::new();
    let mut pass = true;

    // Every experiment run by this suite.
    for (name, t, bound) in [
        ("density", density_sweep(), 1e-9),
        ("knn", knn_run(), 1e-9),
        ("laplacian", laplacian_run(), 1e-9),
        ("counts", counts_run(), 1e-6),
    ] {
        let ok = no_error_rows(t) && t.max_marginal_deviation <= bound;
        pass &= ok;
        notes.push(format!("{name}_dev={:.1e}", t.max_marginal_deviation));
    }

    let (_, noise) = circle_dataset(400, 400, &NoiseModel::varying_ball(), 11).unwrap();
    let k = gaussian_kernel(&pairwise_sq_dists(&noise.noisy_points).unwrap(), 0.1).unwrap();
    let a = sinkhorn_symmetric_with(&k, &ScalingOptions::simulation()).unwrap();
    let b = sinkhorn_symmetric_with(&k, &ScalingOptions::simulation().with_init(Initialization::Zeros)).unwrap();
    let init_gap = a
        .log_d
        .iter()
        .zip(&b.log_d)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    pass &= a.converged && b.converged && init_gap <= 1e-6;
    notes.push(format!("init_gap={init_gap:.1e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut oracle_gap: f64 = 0.0;
    for n in 3..=6 {
        let pts = Array2::from_shape_fn((n, 2), |_| rng.random_range(-1.0..1.0));
        let k = gaussian_kernel(&pairwise_sq_dists(&pts).unwrap(), 0.5).unwrap();
        let sol = sinkhorn_symmetric_with(&k, &ScalingOptions::simulation().with_tol(1e-13)).unwrap();
        let want = newton_log_scaling(&k.to_dense());
        for (x, y) in sol.log_d.iter().zip(&want) {
            oracle_gap = oracle_gap.max((x - y).abs());
        }
    }
    pass &= oracle_gap <= 1e-8;
    notes.push(format!("newton_gap={oracle_gap:.1e}"));
    report(1, pass, notes.join(" "));
}

#[test]
fn c02_ds_kde_clean_accuracy() {
    let t = density_sweep();
    let e = get(t, 2000.0, "none", "ds_kde_s2", "max_error_mean");
    report(
        2,
        no_error_rows(t) && (0.01..=0.04).contains(&e),
        format!("clean_max_error_mean={e:.4}"),
    );
}

#[test]
fn c03_ds_kde_noise_robustness() {
    let t = density_sweep();
    let clean = get(t, 2000.0, "none", "ds_kde_s2", "max_error_mean");
    let mut pass = no_error_rows(t);
    let mut notes = vec![format!("clean={clean:.4}")];
    for setting in ["varying_ball", "outlier_gaussian"] {
        let ds = get(t, 2000.0, setting, "ds_kde_s2", "max_error_mean");
        let kde = get(t, 2000.0, setting, "kde", "max_error_mean");
        pass &= ds <= 2.0 * clean && kde >= 0.08;
        notes.push(format!("{setting}: ds={ds:.4} kde={kde:.4}"));
    }
    report(3, pass, notes.join(" "));
}

#[test]
fn c04_convergence_rate() {
    let t = density_sweep();
    let ns = [500.0, 1000.0, 2000.0];
    let mut pass = no_error_rows(t);
    let mut notes = Vec::new();
    for setting in ["none", "varying_ball", "outlier_gaussian"] {
        let errs: Vec<f64> = ns
            .iter()
            .map(|&n| get(t, n, setting, "ds_kde_s2", "max_error_mean"))
            .collect();
        let slope = log_log_slope(&ns, &errs);
        pass &= (-0.7..=-0.3).contains(&slope);
        notes.push(format!("{setting}_slope={slope:.3}"));
    }
    report(4, pass, notes.join(" "));
}

#[test]
fn c05_distance_bias() {
    let t = knn_run();
    let bias = get(t, 1000.0, "varying_ball", "ds_kde_s2", "distance_bias_mean");
    report(
        5,
        no_error_rows(t) && (-0.045..=-0.025).contains(&bias),
        format!("mean_bias={bias:.4}"),
    );
}

#[test]
fn c06_knn_recovery() {
    let t = knn_run();
    let corrected = get(t, 50.0, "varying_ball", "corrected", "knn_accuracy_mean");
    let noisy = get(t, 50.0, "varying_ball", "noisy", "knn_accuracy_mean");
    report(
        6,
        no_error_rows(t) && corrected > 0.75 && noisy < 0.65,
        format!("k=50 corrected={corrected:.3} (need > 0.75) noisy={noisy:.3} (need < 0.65)"),
    );
}

#[test]
fn c07_laplacian_ordering() {
    let t = laplacian_run();
    let sweep = ExperimentConfig::new(ExperimentId::Fig7).sweep;
    let mut pass = no_error_rows(t);
    let mut worst_rel: f64 = 0.0;
    for &eps in &sweep {
        let r = get(t, eps, "none", "robust_a1", "max_error_mean");
        let q = get(t, eps, "none", "traditional_a1", "max_error_mean");
        worst_rel = worst_rel.max((r - q).abs() / r.max(q));
    }
    pass &= worst_rel <= 0.10;
    let mut notes = vec![format!("clean_worst_rel_gap={worst_rel:.3}")];
    for &eps in &sweep[..2] {
        let r = get(t, eps, "varying_ball", "robust_a1", "max_error_mean");
        let q = get(t, eps, "varying_ball", "traditional_a1", "max_error_mean");
        pass &= r < q;
        notes.push(format!("noisy eps={eps}: robust={r:.3} traditional={q:.3}"));
    }
    report(7, pass, notes.join(" "));
}

#[test]
fn c08_population_scaling_trend() {
    let q = |t: f64| wrapped_normal_density(t, CIRCLE_SIGMA_SQ);
    let devs: Vec<f64> = [0.05, 0.025, 0.0125]
        .iter()
        .map(|&eps| {
            solve_population_scaling_1d(q, eps, 2048)
                .unwrap()
                .max_deviation_from_inverse_sqrt_density()
        })
        .collect();
    let ratios = [devs[0] / devs[1], devs[1] / devs[2]];
    let pass = ratios.iter().all(|r| (1.5..=2.5).contains(r));
    let devs: Vec<String> = devs.iter().map(|d| format!("{d:.3e}")).collect();
    report(8, pass, format!("devs=[{}] ratios={ratios:.3?}", devs.join(", ")));
}

#[test]
fn c09_poisson_surrogate() {
    let t = counts_run();
    let sweep = ExperimentConfig::new(ExperimentId::Fig8Synthetic).sweep;
    let mut pass = no_error_rows(t);
    let mut min_r = f64::INFINITY;
    let mut notes = Vec::new();
    for &eps in &sweep {
        let r = get(t, eps, "poisson_counts", "ds_kde", "pearson_noise_vs_inv_count_mean");
        min_r = min_r.min(r);
        let robust = get(t, eps, "poisson_counts", "robust_a0", "worst_transition_mean");
        let trad = get(t, eps, "poisson_counts", "traditional_a0", "worst_transition_mean");
        pass &= robust <= trad;
        notes.push(format!("eps={eps}: robust={robust:.2e} traditional={trad:.2e}"));
    }
    pass &= min_r >= 0.9;
    notes.insert(0, format!("min_pearson={min_r:.4}"));
    report(9, pass, notes.join(" "));
}

fn uniform_w(n: usize) -> DoublyStochastic {
    let mut w = Array2::from_elem((n, n), 1.0 / (n - 1) as f64);
    w.diag_mut().fill(0.0);
    DoublyStochastic::from_linear(w, 0.1, 1e-12).unwrap()
}

#[test]
fn c10_exact_invariants() {
    let mut fails = Vec::new();
    let (_, noise) = circle_dataset(150, 80, &NoiseModel::varying_ball(), 21).unwrap();
    let pts = &noise.noisy_points;
    let eps = 0.1;
    let sc = scale_points(pts, eps, &ScalingOptions::simulation()).unwrap();
    let q = estimate_density(&sc.w, Exponent::Power(2.0)).unwrap();
    let n = pts.nrows();
    let tight = ScalingOptions::simulation().with_tol(1e-12);

    // Renormalized families are stochastic to rounding; W itself only to its
    // measured marginal deviation.
    let ones = vec![1.0; n];
    let w_dev = sc.w.max_marginal_deviation();
    for alpha in [0.0, 0.5, 1.0] {
        for fam in [
            robust_markov(&sc.w, &q, alpha).unwrap(),
            traditional_markov(&sc.kernel, alpha).unwrap(),
        ] {
            let lf = apply_laplacian(&fam, &ones).unwrap();
            let worst = lf.iter().map(|v| v.abs()).fold(0.0, f64::max) / fam.laplacian_scale;
            let bound = if alpha == 0.5 && fam.source_tag == Family::Robust {
                w_dev + 1e-15
            } else {
                1e-12
            };
            if worst > bound {
                fails.push(format!(
                    "constant annihilation alpha={alpha} {}: {worst:e}",
                    fam.source_tag
                ));
            }
        }
    }

    let table = estimate_table(pts, Some(&sc.sq_dists), &sc.solution, &sc.w, &q, None).unwrap();
    let norms = dsnorm::geometry::row_sq_norms(pts);
    let gap = (0..n)
        .map(|i| (table.signal_sq_hat[i] + table.noise_sq_hat[i] - norms[i]).abs())
        .fold(0.0, f64::max);
    if gap > 1e-12 {
        fails.push(format!("signal plus noise {gap:e}"));
    }

    let alt = corrected_dists_from_w(&sc.w, &q).unwrap();
    let form_gap = max_offdiag_diff(&table.corrected_dists, &alt);
    if form_gap > 1e-8 {
        fails.push(format!("distance forms {form_gap:e}"));
    }

    if robust_markov(&sc.w, &q, 0.5).unwrap().markov != *sc.w.linear() {
        fails.push("alpha=0.5 differs from W".into());
    }

    let u = uniform_w(40);
    for s in [0.5, 2.0, 3.0] {
        if ds_kde(&u, s).unwrap().raw.iter().any(|v| (v - 1.0).abs() > 1e-12) {
            fails.push(format!("uniform DS-KDE s={s}"));
        }
    }
    if ds_kde_entropy(&u).unwrap().raw.iter().any(|v| (v - 1.0).abs() > 1e-12) {
        fails.push("uniform DS-KDE entropy limit".into());
    }

    let kc: AffinityMatrix = sc.kernel.scaled(37.0).unwrap();
    let w1 = assemble_W(&sc.kernel, &sinkhorn_symmetric_with(&sc.kernel, &tight).unwrap()).unwrap();
    let wc = assemble_W(&kc, &sinkhorn_symmetric_with(&kc, &tight).unwrap()).unwrap();
    let wgap = w1
        .linear()
        .iter()
        .zip(wc.linear())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if wgap > 1e-10 {
        fails.push(format!("kernel scale invariance {wgap:e}"));
    }

    let small = |seed| ExperimentConfig {
        sweep: vec![60.0, 90.0],
        repeats: 2,
        seed,
        ..ExperimentConfig::new(ExperimentId::Fig3)
    };
    let a = run_experiment(&small(7)).unwrap().to_csv_string().unwrap();
    let b = run_experiment(&small(7)).unwrap().to_csv_string().unwrap();
    let c = run_experiment(&small(8)).unwrap().to_csv_string().unwrap();
    if a != b || a == c {
        fails.push("determinism".into());
    }

    let detail = if fails.is_empty() {
        "all exact invariants hold".to_string()
    } else {
        fails.join("; ")
    };
    report(10, fails.is_empty(), detail);
}
