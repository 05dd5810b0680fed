//! C ABI over `spikebasin`.
//!
//! Objects are opaque handles created by `sb_*_new`-style functions and
//! released with the matching `sb_*_free`. Every fallible call returns an
//! [`SbStatus`]; on failure the message is available from
//! [`sb_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spikebasin::certificates::{beta_max_noiseless, beta_max_noisy, BasinCertificate, Provenance, RipConstants};
use spikebasin::error::Error;
use spikebasin::experiment::{certify_scenario, CertifyOptions, Scenario};
use spikebasin::kernel::gaussian_kernel;
use spikebasin::measurement::{draw_gaussian_operator, FourierOperator, MeasurementVector};
use spikebasin::objective::Objective;
use spikebasin::solver::{gradient_descent, DescentSettings, Termination};
use spikebasin::spike_model::{is_in_theta, unpack, ModelConfig, SpikeTrain};

use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    /// The certificate exists but does not certify anything, or the noise exceeds its budget.
    Vacuous = 4,
    Io = 5,
    Numerical = 6,
    Panic = 7,
}

pub struct SbSpikeTrain(SpikeTrain);
pub struct SbOperator(FourierOperator);
pub struct SbObjective(Objective);

/// Scalar summary of a basin certificate. `noise_budget` and `noise_norm`
/// are NaN for noiseless certificates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbCertificate {
    pub beta_max: f64,
    pub c1: f64,
    pub c2_or_c3: f64,
    pub c_h: f64,
    pub lipschitz: f64,
    pub tau_max: f64,
    pub noise_budget: f64,
    pub noise_norm: f64,
    pub lambda_min_lb: f64,
    pub lambda_max_ub: f64,
    pub gamma: f64,
    pub mu: f64,
    pub vacuous: bool,
}

impl From<&BasinCertificate> for SbCertificate {
    fn from(c: &BasinCertificate) -> Self {
        SbCertificate {
            beta_max: c.beta_max,
            c1: c.c1,
            c2_or_c3: c.c2_or_c3,
            c_h: c.c_h_used,
            lipschitz: c.lipschitz,
            tau_max: c.tau_max,
            noise_budget: c.noise_budget.unwrap_or(f64::NAN),
            noise_norm: c.noise_norm.unwrap_or(f64::NAN),
            lambda_min_lb: c.bounds_at_beta.lambda_min_lb,
            lambda_max_ub: c.bounds_at_beta.lambda_max_ub,
            gamma: c.gamma,
            mu: c.mu,
            vacuous: c.vacuous,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbTermination {
    GradTol = 0,
    DistTol = 1,
    MaxIters = 2,
    Diverged = 3,
}

impl From<Termination> for SbTermination {
    fn from(t: Termination) -> Self {
        match t {
            Termination::GradTol => SbTermination::GradTol,
            Termination::DistTol => SbTermination::DistTol,
            Termination::MaxIters => SbTermination::MaxIters,
            Termination::Diverged => SbTermination::Diverged,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> SbStatus {
    match err {
        Error::DimensionMismatch { .. } => SbStatus::DimensionMismatch,
        Error::NoiseBudgetExceeded { .. } | Error::BetaTooLarge { .. } | Error::NoValidRadius { .. } => SbStatus::Vacuous,
        Error::Io(_) => SbStatus::Io,
        Error::Quadrature(_) | Error::NotSymmetric { .. } | Error::AllSamplesDegenerate => SbStatus::Numerical,
        _ => SbStatus::InvalidArgument,
    }
}

struct Fail(SbStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SbStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SbStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside spikebasin".into());
            SbStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn path_arg(p: *const c_char) -> Result<&'static Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| Fail(SbStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

fn theta_of(config: &ModelConfig, theta: &[f64]) -> Result<SpikeTrain, Fail> {
    Ok(unpack(config, theta)?)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next `sb_*` call on the same thread.
#[no_mangle]
pub extern "C" fn sb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from an `sb_*` function that returns an owned string, or be null.
#[no_mangle]
pub unsafe extern "C" fn sb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a spike train from `k` amplitudes and `k * d` row-major positions.
///
/// # Safety
/// `amplitudes` must hold `k` values, `positions` `k * d` values, and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_spike_train_new(
    k: usize,
    d: usize,
    epsilon: f64,
    radius: f64,
    amplitudes: *const f64,
    positions: *const f64,
    out: *mut *mut SbSpikeTrain,
) -> SbStatus {
    guard(|| {
        let config = ModelConfig::new(k, d, epsilon, radius)?;
        let a = slice(amplitudes, k, "amplitudes")?.to_vec();
        let t = slice(positions, k * d, "positions")?.to_vec();
        put(out, SbSpikeTrain(SpikeTrain::from_flat(config, a, t)?))
    })
}

/// # Safety
/// `train` must come from `sb_spike_train_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn sb_spike_train_free(train: *mut SbSpikeTrain) {
    if !train.is_null() {
        drop(Box::from_raw(train));
    }
}

/// Writes whether the train is ε-separated inside the radius-R ball.
///
/// # Safety
/// Valid handle and writable `out`.
#[no_mangle]
pub unsafe extern "C" fn sb_spike_train_is_separated(train: *const SbSpikeTrain, out: *mut bool) -> SbStatus {
    guard(|| {
        let t = deref(train, "train")?;
        *out.as_mut().ok_or_else(|| null("out"))? = is_in_theta(&t.0);
        Ok(())
    })
}

/// JSON form of the train; release with `sb_string_free`.
///
/// # Safety
/// Valid handle and writable `out`.
#[no_mangle]
pub unsafe extern "C" fn sb_spike_train_to_json(train: *const SbSpikeTrain, out: *mut *mut c_char) -> SbStatus {
    guard(|| {
        let t = deref(train, "train")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = serde_json::to_string(&t.0).map_err(Error::from)?;
        *out = CString::new(json).map_err(|e| Fail(SbStatus::InvalidArgument, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// Random Fourier operator with `ω_l ~ N(0, σ⁻² I)` and unit weights.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_operator_gaussian(
    m: usize,
    sigma: f64,
    d: usize,
    seed: u64,
    out: *mut *mut SbOperator,
) -> SbStatus {
    guard(|| put(out, SbOperator(draw_gaussian_operator(m, sigma, d, seed)?)))
}

/// Reads an operator JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_operator_from_json(path: *const c_char, out: *mut *mut SbOperator) -> SbStatus {
    guard(|| {
        let text = std::fs::read_to_string(path_arg(path)?).map_err(Error::from)?;
        let op: FourierOperator = serde_json::from_str(&text).map_err(Error::from)?;
        put(out, SbOperator(op))
    })
}

/// # Safety
/// `op` must come from an `sb_operator_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn sb_operator_free(op: *mut SbOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// # Safety
/// Valid handle and writable `m`.
#[no_mangle]
pub unsafe extern "C" fn sb_operator_m(op: *const SbOperator, m: *mut usize) -> SbStatus {
    guard(|| {
        *m.as_mut().ok_or_else(|| null("m"))? = deref(op, "operator")?.0.m();
        Ok(())
    })
}

/// Objective whose data are the exact measurements of `truth`.
///
/// # Safety
/// Valid handles and writable `out`.
#[no_mangle]
pub unsafe extern "C" fn sb_objective_noiseless(
    op: *const SbOperator,
    truth: *const SbSpikeTrain,
    out: *mut *mut SbObjective,
) -> SbStatus {
    guard(|| {
        let op = deref(op, "operator")?;
        let truth = deref(truth, "truth")?;
        put(out, SbObjective(Objective::noiseless(op.0.clone(), &truth.0)?))
    })
}

/// Objective for measurements given as `m` real and `m` imaginary parts.
///
/// # Safety
/// `data_re` and `data_im` must hold `m` values; `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sb_objective_new(
    op: *const SbOperator,
    data_re: *const f64,
    data_im: *const f64,
    m: usize,
    k: usize,
    epsilon: f64,
    radius: f64,
    out: *mut *mut SbObjective,
) -> SbStatus {
    guard(|| {
        let op = deref(op, "operator")?;
        let re = slice(data_re, m, "data_re")?;
        let im = slice(data_im, m, "data_im")?;
        let data = MeasurementVector::new(re.iter().zip(im).map(|(&a, &b)| Complex64::new(a, b)).collect())?;
        let config = ModelConfig::new(k, op.0.d(), epsilon, radius)?;
        put(out, SbObjective(Objective::new(op.0.clone(), data, config)?))
    })
}

/// # Safety
/// `obj` must come from an `sb_objective_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn sb_objective_free(obj: *mut SbObjective) {
    if !obj.is_null() {
        drop(Box::from_raw(obj));
    }
}

/// Length `k(d+1)` of the packed parameter vector.
///
/// # Safety
/// Valid handle and writable `dim`.
#[no_mangle]
pub unsafe extern "C" fn sb_objective_dim(obj: *const SbObjective, dim: *mut usize) -> SbStatus {
    guard(|| {
        *dim.as_mut().ok_or_else(|| null("dim"))? = deref(obj, "objective")?.0.config().dim();
        Ok(())
    })
}

/// `g(θ)` at the packed `theta = (a₁..a_k, t₁..t_k)`.
///
/// # Safety
/// `theta` must hold `len` values and `value` be writable.
#[no_mangle]
pub unsafe extern "C" fn sb_objective_eval(
    obj: *const SbObjective,
    theta: *const f64,
    len: usize,
    value: *mut f64,
) -> SbStatus {
    guard(|| {
        let obj = deref(obj, "objective")?;
        let v = obj.0.eval_packed(slice(theta, len, "theta")?)?;
        *value.as_mut().ok_or_else(|| null("value"))? = v;
        Ok(())
    })
}

/// Writes `∇g(θ)` into `grad` (`len` values).
///
/// # Safety
/// `theta` and `grad` must each hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sb_objective_gradient(
    obj: *const SbObjective,
    theta: *const f64,
    len: usize,
    grad: *mut f64,
) -> SbStatus {
    guard(|| {
        let obj = deref(obj, "objective")?;
        let g = obj.0.gradient_packed(slice(theta, len, "theta")?)?;
        slice_mut(grad, len, "grad")?.copy_from_slice(&g);
        Ok(())
    })
}

/// Writes the Hessian row-major into `hessian` (`len * len` values).
///
/// # Safety
/// `theta` must hold `len` values and `hessian` `len * len`.
#[no_mangle]
pub unsafe extern "C" fn sb_objective_hessian(
    obj: *const SbObjective,
    theta: *const f64,
    len: usize,
    hessian: *mut f64,
) -> SbStatus {
    guard(|| {
        let obj = deref(obj, "objective")?;
        let th = theta_of(obj.0.config(), slice(theta, len, "theta")?)?;
        let h = obj.0.hessian(&th)?.h;
        let out = slice_mut(hessian, len * len, "hessian")?;
        for i in 0..len {
            for j in 0..len {
                out[i * len + j] = h[(i, j)];
            }
        }
        Ok(())
    })
}

/// Fixed-step gradient descent from `theta` (updated in place).
///
/// # Safety
/// `theta` must hold `len` values; `iterations` and `termination` may be null.
#[no_mangle]
pub unsafe extern "C" fn sb_descend(
    obj: *const SbObjective,
    theta: *mut f64,
    len: usize,
    tau: f64,
    max_iters: usize,
    grad_tol: f64,
    iterations: *mut usize,
    termination: *mut SbTermination,
) -> SbStatus {
    guard(|| {
        let obj = deref(obj, "objective")?;
        let theta = slice_mut(theta, len, "theta")?;
        let start = theta_of(obj.0.config(), theta)?;
        let mut settings = DescentSettings::fixed(tau);
        settings.max_iters = max_iters;
        settings.grad_tol = grad_tol;
        let trace = gradient_descent(&obj.0, &start, &settings, None)?;
        theta.copy_from_slice(&trace.final_theta);
        if let Some(n) = iterations.as_mut() {
            *n = trace.iterations();
        }
        if let Some(t) = termination.as_mut() {
            *t = trace.termination.into();
        }
        Ok(())
    })
}

/// Basin certificate from user-supplied constants for a Gaussian kernel of
/// width `sigma`. A negative `noise_norm` selects the noiseless formulas.
///
/// # Safety
/// Valid handle and writable `out`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sb_certify_constants(
    theta_star: *const SbSpikeTrain,
    sigma: f64,
    gamma: f64,
    mu: f64,
    d_a_r: f64,
    m: usize,
    noise_norm: f64,
    q: f64,
    out: *mut SbCertificate,
) -> SbStatus {
    guard(|| {
        let theta = deref(theta_star, "theta_star")?;
        let kernel = gaussian_kernel(sigma)?;
        let rip = RipConstants::new(gamma, mu, Provenance::User)?;
        let cert = if noise_norm < 0.0 {
            beta_max_noiseless(&theta.0, &rip, &kernel, d_a_r, m, q)?
        } else {
            beta_max_noisy(&theta.0, &rip, &kernel, d_a_r, m, noise_norm, q)?
        };
        *out.as_mut().ok_or_else(|| null("out"))? = (&cert).into();
        Ok(())
    })
}

/// Loads a scenario (or config) file, estimates the constants with default
/// settings and certifies it.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sb_certify_scenario_file(path: *const c_char, seed: u64, out: *mut SbCertificate) -> SbStatus {
    guard(|| {
        let scenario = Scenario::load(path_arg(path)?, seed)?;
        let report = certify_scenario(&scenario, &CertifyOptions { seed, ..Default::default() })?;
        *out.as_mut().ok_or_else(|| null("out"))? = (&report.certificate).into();
        Ok(())
    })
}
