//! Symmetric matrix scaling: find `d > 0` such that `W = diag(d) K diag(d)` is
//! doubly stochastic.
//!
//! The solver runs in the log domain. The main loop is the geometric-mean
//! damped fixed point `u ← (u + log t − LSE_j(log K_ij + u_j)) / 2` applied to
//! all rows at once. If the max row-sum residual increases after warm-up or
//! stops improving, the solver switches to alternating Sinkhorn sweeps and
//! symmetrizes their two factors.

use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::kernel::{degrees, AffinityMatrix};
use crate::numerics::lse_excluding;

/// Iterations before the monotone-residual check is enforced.
const WARMUP_ITERS: usize = 10;
/// Window and minimum relative improvement used for stall detection.
const STALL_WINDOW: usize = 50;
const STALL_IMPROVEMENT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    /// `log d_i = −½ log D_ii`, the `D^{−1/2}` start.
    InverseSqrtDegree,
    Zeros,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: Initialization,
}

impl ScalingOptions {
    /// Defaults for simulated data: tolerance `1e-9`, `10^5` iterations.
    pub fn simulation() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
            init: Initialization::InverseSqrtDegree,
        }
    }

    /// Defaults for count data: tolerance `1e-6`, `10^4` iterations.
    pub fn counts() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
            init: Initialization::InverseSqrtDegree,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_init(mut self, init: Initialization) -> Self {
        self.init = init;
        self
    }
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self::simulation()
    }
}

/// Log scaling factors plus convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSolution {
    pub log_d: Vec<f64>,
    /// `max_i |Σ_j d_i K_ij d_j / t_i − 1|` at `log_d`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub tol: f64,
    /// Residual before each update, then the final residual.
    pub history: Vec<f64>,
    pub used_fallback: bool,
}

impl ScalingSolution {
    pub fn n(&self) -> usize {
        self.log_d.len()
    }

    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

/// Solves `Σ_{j≠i} d_i K_ij d_j = 1` from the `D^{−1/2}` start.
pub fn sinkhorn_symmetric(k: &AffinityMatrix, tol: f64, max_iter: usize) -> Result<ScalingSolution> {
    sinkhorn_symmetric_with(k, &ScalingOptions::simulation().with_tol(tol).with_max_iter(max_iter))
}

pub fn sinkhorn_symmetric_with(k: &AffinityMatrix, opts: &ScalingOptions) -> Result<ScalingSolution> {
    if k.n() < 3 {
        return param(format!("scaling needs n >= 3 for uniqueness, got {}", k.n()));
    }
    let init = match &opts.init {
        Initialization::InverseSqrtDegree => degrees(k).log_degrees.iter().map(|l| -0.5 * l).collect(),
        Initialization::Zeros => vec![0.0; k.n()],
        Initialization::Given(v) => v.clone(),
    };
    scale_log_kernel(k.log_entries(), true, None, opts.tol, opts.max_iter, init)
}

/// Core engine over an explicit symmetric log-kernel.
///
/// `skip_diagonal` excludes `(i, i)` from every row sum. `log_targets`, when
/// given, prescribes row sums `t_i` (default all ones); the residual is then
/// measured relative to `t_i`.
pub(crate) fn scale_log_kernel(
    log_k: &Array2<f64>,
    skip_diagonal: bool,
    log_targets: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    init: Vec<f64>,
) -> Result<ScalingSolution> {
    run_engine(log_k, skip_diagonal, log_targets, tol, max_iter, init, false)
}

fn run_engine(
    log_k: &Array2<f64>,
    skip_diagonal: bool,
    log_targets: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    init: Vec<f64>,
    force_fallback: bool,
) -> Result<ScalingSolution> {
    let n = log_k.nrows();
    if log_k.ncols() != n {
        return Err(Error::Dimension("kernel must be square".into()));
    }
    if !(tol > 0.0) {
        return param(format!("tolerance must be positive, got {tol}"));
    }
    if init.len() != n || init.iter().any(|v| !v.is_finite()) {
        return param("initial log scaling must be finite with one entry per point");
    }
    for ((i, j), v) in log_k.indexed_iter() {
        if (i != j || !skip_diagonal) && !v.is_finite() {
            return param(format!("kernel entry ({i},{j}) is not finite"));
        }
    }
    let zeros;
    let targets = match log_targets {
        Some(t) if t.len() == n => t,
        Some(_) => return Err(Error::Dimension("target marginals length".into())),
        None => {
            zeros = vec![0.0; n];
            &zeros
        }
    };
    let rows = log_k.as_slice().expect("standard layout");
    let row_lse = |u: &[f64]| -> Vec<f64> {
        rows.par_chunks(n)
            .enumerate()
            .map(|(i, row)| lse_excluding(row, u, skip_diagonal.then_some(i)))
            .collect()
    };
    let residual_of = |u: &[f64], lse: &[f64]| -> f64 {
        u.iter()
            .zip(lse)
            .zip(targets)
            .map(|((a, b), t)| ((a + b - t).exp() - 1.0).abs())
            .fold(0.0, f64::max)
    };

    let mut u = init;
    let mut history = Vec::new();
    let mut used_fallback = false;
    let mut iterations = 0;
    let mut lse = row_lse(&u);
    let mut residual = residual_of(&u, &lse);
    history.push(residual);
    // Alternating-sweep factors, live only in fallback mode.
    let mut cols = Vec::new();
    if force_fallback {
        used_fallback = true;
        cols = u.clone();
    }

    while residual > tol && iterations < max_iter {
        if !used_fallback {
            let k = history.len() - 1;
            let increased = k > WARMUP_ITERS && history[k] > history[k - 1];
            let stalled = k >= STALL_WINDOW && history[k] > (1.0 - STALL_IMPROVEMENT) * history[k - STALL_WINDOW];
            if increased || stalled || !residual.is_finite() {
                used_fallback = true;
                cols = u.clone();
            }
        }
        if used_fallback {
            let lc = row_lse(&cols);
            let r: Vec<f64> = targets.iter().zip(&lc).map(|(t, l)| t - l).collect();
            let lr = row_lse(&r);
            cols = targets.iter().zip(&lr).map(|(t, l)| t - l).collect();
            u = r.iter().zip(&cols).map(|(a, b)| 0.5 * (a + b)).collect();
        } else {
            for ((ui, li), ti) in u.iter_mut().zip(&lse).zip(targets) {
                *ui = 0.5 * (*ui + ti - li);
            }
        }
        iterations += 1;
        lse = row_lse(&u);
        residual = residual_of(&u, &lse);
        history.push(residual);
    }

    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Refused("scaling diverged to non-finite factors".into()));
    }
    Ok(ScalingSolution {
        log_d: u,
        residual,
        iterations,
        converged: residual <= tol,
        tol,
        history,
        used_fallback,
    })
}

/// A symmetric doubly stochastic matrix `W = diag(d) K diag(d)` with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DoublyStochastic {
    /// `log W_ij`; diagonal entries are `−∞`.
    log_entries: Array2<f64>,
    linear: Array2<f64>,
    bandwidth: f64,
}

impl DoublyStochastic {
    /// Wraps an explicit nonnegative matrix with zero diagonal whose rows sum
    /// to one within `tol`.
    pub fn from_linear(w: Array2<f64>, bandwidth: f64, tol: f64) -> Result<Self> {
        let (n, c) = w.dim();
        if n != c || n < 2 {
            return Err(Error::Dimension("W must be square with n >= 2".into()));
        }
        for ((i, j), v) in w.indexed_iter() {
            if i == j && *v != 0.0 {
                return param("W must have a zero diagonal");
            }
            if !(*v >= 0.0) || !v.is_finite() {
                return param(format!("W entry ({i},{j}) must be finite and nonnegative"));
            }
        }
        let dev = crate::kernel::max_row_sum_deviation(&w);
        if dev > tol {
            return param(format!("W rows deviate from one by {dev:e}"));
        }
        let mut log = w.mapv(f64::ln);
        log.diag_mut().fill(f64::NEG_INFINITY);
        Ok(Self {
            log_entries: log,
            linear: w,
            bandwidth,
        })
    }

    pub fn n(&self) -> usize {
        self.linear.nrows()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn log_entries(&self) -> &Array2<f64> {
        &self.log_entries
    }

    pub fn log_row(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.log_entries.as_slice().expect("standard layout")[i * n..(i + 1) * n]
    }

    pub fn linear(&self) -> &Array2<f64> {
        &self.linear
    }

    pub fn into_linear(self) -> Array2<f64> {
        self.linear
    }

    /// Largest deviation of any row or column sum from one.
    pub fn max_marginal_deviation(&self) -> f64 {
        let rows = self.linear.sum_axis(Axis(1));
        let cols = self.linear.sum_axis(Axis(0));
        rows.iter()
            .chain(cols.iter())
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Forms `W` from a converged solution, in both log and linear form.
#[allow(non_snake_case)]
pub fn assemble_W(k: &AffinityMatrix, sol: &ScalingSolution) -> Result<DoublyStochastic> {
    if !sol.converged {
        return Err(Error::Refused(format!(
            "cannot assemble W from an unconverged solution (residual {:e})",
            sol.residual
        )));
    }
    let n = k.n();
    if sol.n() != n {
        return Err(Error::Dimension("solution and kernel sizes differ".into()));
    }
    let u = &sol.log_d;
    let lk = k.log_entries();
    let mut log = Array2::<f64>::from_elem((n, n), f64::NEG_INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = u[i] + lk[[i, j]] + u[j];
            log[[i, j]] = v;
            log[[j, i]] = v;
        }
    }
    let mut linear = log.mapv(f64::exp);
    linear.diag_mut().fill(0.0);
    Ok(DoublyStochastic {
        log_entries: log,
        linear,
        bandwidth: k.bandwidth(),
    })
}

/// Implied squared noise magnitudes `ε (log d_i + ½ log((n−1)(πε)^{d/2} q_i))`.
pub fn scaling_factor_diagnostics(
    sol: &ScalingSolution,
    epsilon: f64,
    dim: usize,
    density: &[f64],
) -> Result<Vec<f64>> {
    sol.ensure_converged()?;
    if density.len() != sol.n() {
        return Err(Error::Dimension("density length differs from the solution".into()));
    }
    if density.iter().any(|q| !(*q > 0.0)) {
        return param("density values must be positive");
    }
    let n = sol.n() as f64;
    let log_const = (n - 1.0).ln() + 0.5 * dim as f64 * (PI * epsilon).ln();
    Ok(sol
        .log_d
        .iter()
        .zip(density)
        .map(|(ld, q)| epsilon * (ld + 0.5 * (log_const + q.ln())))
        .collect())
}
