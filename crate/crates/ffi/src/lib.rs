//! C ABI over `dsnorm`.
//!
//! A [`DsnModel`] is built from a row-major point array and owns the
//! converged scaling of its Gaussian kernel. Every entry point returns a
//! [`DsnStatus`]; on failure the message is kept per thread and can be read
//! with [`dsn_last_error_message`]. Output buffers are caller-allocated and
//! their length is checked.
//!
//! Exponent arguments follow the CLI: `s = 1` selects the entropy limit.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dsnorm::density::{estimate_density, DensityEstimate, Exponent};
use dsnorm::harness::{scale_points, Scaled};
use dsnorm::inference::{noise_magnitude, signal_magnitude_and_distances};
use dsnorm::laplacian::robust_markov;
use dsnorm::scaling::ScalingOptions;
use dsnorm::Error;
use ndarray::Array2;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Refused = 3,
    NotConverged = 4,
    Dimension = 5,
    BufferTooSmall = 6,
    Panic = 7,
    Other = 8,
}

/// Opaque model handle.
pub struct DsnModel {
    points: Array2<f64>,
    scaled: Scaled,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(DsnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parameter(_) => DsnStatus::InvalidParameter,
            Error::Refused(_) => DsnStatus::Refused,
            Error::NotConverged { .. } => DsnStatus::NotConverged,
            Error::Dimension(_) => DsnStatus::Dimension,
            _ => DsnStatus::Other,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: DsnStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> DsnStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            DsnStatus::Panic
        }
    }
}

fn exponent(s: f64) -> Result<Exponent, Failure> {
    if s == 1.0 {
        Ok(Exponent::Entropy)
    } else if s > 0.0 && s.is_finite() {
        Ok(Exponent::Power(s))
    } else {
        fail(
            DsnStatus::InvalidParameter,
            format!("exponent must be positive, got {s}"),
        )
    }
}

unsafe fn model_ref<'a>(model: *const DsnModel) -> Result<&'a DsnModel, Failure> {
    if model.is_null() {
        return fail(DsnStatus::NullPointer, "model handle is null");
    }
    Ok(&*model)
}

unsafe fn out_slice<'a>(out: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], Failure> {
    if out.is_null() {
        return fail(DsnStatus::NullPointer, "output buffer is null");
    }
    if len < need {
        return fail(
            DsnStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {need}"),
        );
    }
    Ok(std::slice::from_raw_parts_mut(out, need))
}

impl DsnModel {
    fn density(&self, s: f64) -> Result<DensityEstimate, Failure> {
        Ok(estimate_density(&self.scaled.w, exponent(s)?)?)
    }
}

/// Scales the Gaussian kernel of `n` points in `m` dimensions.
///
/// `points` is row-major with `n * m` entries. On success `*out` receives a
/// handle that must be released with [`dsn_model_free`].
///
/// # Safety
/// `points` must be valid for `n * m` reads and `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn dsn_model_new(
    points: *const f64,
    n: usize,
    m: usize,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
    out: *mut *mut DsnModel,
) -> DsnStatus {
    guard(|| {
        if points.is_null() || out.is_null() {
            return fail(DsnStatus::NullPointer, "points or out is null");
        }
        *out = ptr::null_mut();
        let len = n
            .checked_mul(m)
            .ok_or_else(|| Failure(DsnStatus::InvalidParameter, "n * m overflows".into()))?;
        let data = std::slice::from_raw_parts(points, len).to_vec();
        let points = Array2::from_shape_vec((n, m), data).map_err(|e| Failure(DsnStatus::Dimension, e.to_string()))?;
        let opts = ScalingOptions::simulation().with_tol(tol).with_max_iter(max_iter);
        let scaled = scale_points(&points, epsilon, &opts)?;
        *out = Box::into_raw(Box::new(DsnModel { points, scaled }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`dsn_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dsn_model_free(model: *mut DsnModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// Number of points, or zero for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dsn_model_len(model: *const DsnModel) -> usize {
    if model.is_null() {
        0
    } else {
        (*model).points.nrows()
    }
}

/// Final marginal residual and iteration count of the scaling solve.
///
/// # Safety
/// `model` must be a live handle; `residual` and `iterations` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn dsn_model_residual(
    model: *const DsnModel,
    residual: *mut f64,
    iterations: *mut usize,
) -> DsnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if residual.is_null() || iterations.is_null() {
            return fail(DsnStatus::NullPointer, "output pointer is null");
        }
        *residual = m.scaled.solution.residual;
        *iterations = m.scaled.solution.iterations;
        Ok(())
    })
}

/// Writes `log d_i` for every point.
///
/// # Safety
/// `model` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dsn_model_log_scaling(model: *const DsnModel, out: *mut f64, len: usize) -> DsnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let dst = out_slice(out, len, m.points.nrows())?;
        dst.copy_from_slice(&m.scaled.solution.log_d);
        Ok(())
    })
}

/// Writes the unnormalized DS-KDE with exponent `s`.
///
/// # Safety
/// `model` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dsn_model_density(model: *const DsnModel, s: f64, out: *mut f64, len: usize) -> DsnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let dst = out_slice(out, len, m.points.nrows())?;
        dst.copy_from_slice(&m.density(s)?.raw);
        Ok(())
    })
}

/// Writes the estimated squared noise magnitudes (not debiased).
///
/// # Safety
/// `model` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dsn_model_noise_magnitudes(
    model: *const DsnModel,
    s: f64,
    out: *mut f64,
    len: usize,
) -> DsnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let dst = out_slice(out, len, m.points.nrows())?;
        let q = m.density(s)?;
        let noise = noise_magnitude(&m.scaled.solution, &q, m.scaled.w.bandwidth())?;
        dst.copy_from_slice(&noise);
        Ok(())
    })
}

/// Writes the `n × n` corrected squared distances, row-major, NaN on the diagonal.
///
/// # Safety
/// `model` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dsn_model_corrected_distances(
    model: *const DsnModel,
    s: f64,
    out: *mut f64,
    len: usize,
) -> DsnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let n = m.points.nrows();
        let need = n
            .checked_mul(n)
            .ok_or_else(|| Failure(DsnStatus::InvalidParameter, "n * n overflows".into()))?;
        let dst = out_slice(out, len, need)?;
        let ex = exponent(s)?;
        let q = m.density(s)?;
        let eps = m.scaled.w.bandwidth();
        let noise = noise_magnitude(&m.scaled.solution, &q, eps)?;
        let table = signal_magnitude_and_distances(&m.points, &noise, Some(&m.scaled.sq_dists), eps, ex, None)?;
        dst.copy_from_slice(table.corrected_dists.as_slice().expect("standard layout"));
        Ok(())
    })
}

/// Writes the `n × n` robust Markov matrix `Ŵ^(α)`, row-major.
///
/// # Safety
/// `model` must be a live handle and `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dsn_model_robust_markov(
    model: *const DsnModel,
    s: f64,
    alpha: f64,
    out: *mut f64,
    len: usize,
) -> DsnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let n = m.points.nrows();
        let need = n
            .checked_mul(n)
            .ok_or_else(|| Failure(DsnStatus::InvalidParameter, "n * n overflows".into()))?;
        let dst = out_slice(out, len, need)?;
        let q = m.density(s)?;
        let fam = robust_markov(&m.scaled.w, &q, alpha)?;
        dst.copy_from_slice(fam.markov.as_slice().expect("standard layout"));
        Ok(())
    })
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to fit) and returns the full message length without the NUL.
/// Returns zero when there is no error. `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dsn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let k = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, k);
            *buf.add(k) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dsn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
