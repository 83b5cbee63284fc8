//! C interface to the switchback estimator.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free` function. Every entry point returns an [`SbStatus`];
//! on failure a message is available from [`sb_last_error`] on the same thread.
//! Output arrays are caller-allocated and their length is checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use switchback::design::{lag_weights, AssignmentDesign, TreatmentPath};
use switchback::hac::HacConfig;
use switchback::inference::{confidence_intervals, wald_test};
use switchback::regression::{estimate, EstimateResult, RegressionSpec};
use switchback::{Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    NumericalError = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbVariant {
    Full = 0,
    Marginal = 1,
    Interaction = 2,
}

/// Assignment design.
pub struct SbDesign {
    inner: AssignmentDesign,
}

/// Fitted regression with its HAC covariance.
pub struct SbEstimate {
    inner: EstimateResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(SbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.kind() {
            ErrorKind::Usage => SbStatus::InvalidArgument,
            ErrorKind::Data => SbStatus::DataError,
            ErrorKind::Numerical => SbStatus::NumericalError,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SbStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SbStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SbStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len != need {
        return Err(Failure(SbStatus::InvalidArgument, format!("{what} has length {len}, expected {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn estimate_ref<'a>(est: *const SbEstimate) -> Result<&'a EstimateResult, Failure> {
    est.as_ref().map(|e| &e.inner).ok_or_else(|| null("estimate"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn sb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Bernoulli design with per-period probabilities. `floor` is the overlap bound.
///
/// # Safety
/// `probs` must point to `len` doubles and `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn sb_design_binary(
    probs: *const f64,
    len: usize,
    floor: f64,
    out: *mut *mut SbDesign,
) -> SbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = slice(probs, len, "probs")?;
        let inner = AssignmentDesign::binary(p.to_vec(), floor)?;
        *out = Box::into_raw(Box::new(SbDesign { inner }));
        Ok(())
    })
}

/// Continuous design from declared per-period means and variances.
///
/// # Safety
/// `means` and `variances` must each point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_design_continuous(
    means: *const f64,
    variances: *const f64,
    len: usize,
    variance_floor: f64,
    out: *mut *mut SbDesign,
) -> SbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = slice(means, len, "means")?;
        let v = slice(variances, len, "variances")?;
        let inner = AssignmentDesign::continuous(m.to_vec(), v.to_vec(), None, variance_floor)?;
        *out = Box::into_raw(Box::new(SbDesign { inner }));
        Ok(())
    })
}

/// # Safety
/// `design` must come from an `sb_design_*` constructor and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sb_design_free(design: *mut SbDesign) {
    if !design.is_null() {
        drop(Box::from_raw(design));
    }
}

/// Harmonic-mean lag weights `w_0..w_K` into `out` (`out_len` must be `lags + 1`).
///
/// # Safety
/// `design` must be a live handle and `out` must point to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_lag_weights(
    design: *const SbDesign,
    lags: usize,
    out: *mut f64,
    out_len: usize,
) -> SbStatus {
    guard(|| {
        let d = design.as_ref().ok_or_else(|| null("design"))?;
        let w = lag_weights(&d.inner, lags)?;
        out_slice(out, out_len, w.len(), "out")?.copy_from_slice(&w);
        Ok(())
    })
}

/// Fits the lagged regression and attaches the HAC covariance.
///
/// `bandwidth < 0` selects `floor(T^(1/4))`. `marginal_lag` is read only for
/// the marginal variant.
///
/// # Safety
/// `design` must be live, `y` and `z` must point to `len` doubles, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_estimate(
    design: *const SbDesign,
    y: *const f64,
    z: *const f64,
    len: usize,
    lags: usize,
    variant: SbVariant,
    marginal_lag: usize,
    bandwidth: i64,
    out: *mut *mut SbEstimate,
) -> SbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = design.as_ref().ok_or_else(|| null("design"))?;
        let y = slice(y, len, "y")?;
        let z = slice(z, len, "z")?;
        let spec = match variant {
            SbVariant::Full => RegressionSpec::full(lags),
            SbVariant::Marginal => RegressionSpec::marginal(lags, marginal_lag),
            SbVariant::Interaction => RegressionSpec::interaction(lags),
        };
        let hac = if bandwidth < 0 { HacConfig::default() } else { HacConfig::fixed(bandwidth as usize) };
        let inner = estimate(y, &TreatmentPath::new(z.to_vec()), &d.inner, &spec)?.with_hac(&hac)?;
        *out = Box::into_raw(Box::new(SbEstimate { inner }));
        Ok(())
    })
}

/// # Safety
/// `est` must come from [`sb_estimate`] and not be freed twice. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sb_estimate_free(est: *mut SbEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Number of coefficients `P`, or 0 for a null handle.
///
/// # Safety
/// `est` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sb_estimate_len(est: *const SbEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.inner.tau_hat.len())
}

/// Rescaled effects `τ̂` into `out[P]`.
///
/// # Safety
/// `est` must be live and `out` must point to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_estimate_tau(est: *const SbEstimate, out: *mut f64, out_len: usize) -> SbStatus {
    guard(|| {
        let e = estimate_ref(est)?;
        out_slice(out, out_len, e.tau_hat.len(), "out")?.copy_from_slice(&e.tau_hat);
        Ok(())
    })
}

/// Standard errors `sqrt(V̂_kk / (T-K))` into `out[P]`.
///
/// # Safety
/// `est` must be live and `out` must point to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_estimate_std_errors(est: *const SbEstimate, out: *mut f64, out_len: usize) -> SbStatus {
    guard(|| {
        let e = estimate_ref(est)?;
        let se = e.vhat()?.standard_errors();
        out_slice(out, out_len, se.len(), "out")?.copy_from_slice(&se);
        Ok(())
    })
}

/// HAC covariance `V̂` row-major into `out[P*P]`.
///
/// # Safety
/// `est` must be live and `out` must point to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_estimate_covariance(est: *const SbEstimate, out: *mut f64, out_len: usize) -> SbStatus {
    guard(|| {
        let e = estimate_ref(est)?;
        let v = &e.vhat()?.matrix;
        let p = v.nrows();
        let o = out_slice(out, out_len, p * p, "out")?;
        for i in 0..p {
            for j in 0..p {
                o[i * p + j] = v[(i, j)];
            }
        }
        Ok(())
    })
}

/// Normal-pivot intervals and two-sided p-values, each written to an array of length `P`.
///
/// # Safety
/// `est` must be live; `low`, `high` and `p_values` must each point to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sb_confidence_intervals(
    est: *const SbEstimate,
    level: f64,
    low: *mut f64,
    high: *mut f64,
    p_values: *mut f64,
    out_len: usize,
) -> SbStatus {
    guard(|| {
        let e = estimate_ref(est)?;
        let ci = confidence_intervals(e, level)?;
        let n = ci.len();
        let lo = out_slice(low, out_len, n, "low")?;
        for (o, c) in lo.iter_mut().zip(&ci) {
            *o = c.ci_low;
        }
        let hi = out_slice(high, out_len, n, "high")?;
        for (o, c) in hi.iter_mut().zip(&ci) {
            *o = c.ci_high;
        }
        let pv = out_slice(p_values, out_len, n, "p_values")?;
        for (o, c) in pv.iter_mut().zip(&ci) {
            *o = c.p_value;
        }
        Ok(())
    })
}

/// Studentized Wald test on the coefficient indices `lags[0..n]`.
///
/// # Safety
/// `est` must be live, `lags` must point to `n` indices, `statistic` and `p_value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_wald(
    est: *const SbEstimate,
    lags: *const usize,
    n: usize,
    statistic: *mut f64,
    p_value: *mut f64,
) -> SbStatus {
    guard(|| {
        let e = estimate_ref(est)?;
        if statistic.is_null() || p_value.is_null() {
            return Err(null("output"));
        }
        let subset = if n == 0 {
            &[][..]
        } else if lags.is_null() {
            return Err(null("lags"));
        } else {
            std::slice::from_raw_parts(lags, n)
        };
        let w = wald_test(e, subset)?;
        *statistic = w.statistic;
        *p_value = w.p_value;
        Ok(())
    })
}

/// Copies the last error message into `buf` (NUL-terminated, truncated to `len`).
/// Returns the full message length in bytes, or 0 when there is none.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null when `len` is 0.
#[no_mangle]
pub unsafe extern "C" fn sb_last_error_copy(buf: *mut c_char, len: usize) -> usize {
    let msg = sb_last_error();
    if msg.is_null() {
        return 0;
    }
    let bytes = CStr::from_ptr(msg).to_bytes();
    if !buf.is_null() && len > 0 {
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
        *buf.add(n) = 0;
    }
    bytes.len()
}
