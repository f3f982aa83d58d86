//! C ABI over `asep-core`.
//!
//! Objects are opaque handles created by `asep_*_new` and released by the
//! matching `asep_*_free`. Every fallible call returns an [`AsepStatus`];
//! on failure [`asep_last_error_message`] describes the problem. Rational
//! inputs are passed as NUL-terminated strings such as `"1/3"`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use asep_core::kernel::{GeneralRhoProfile, RhoProfile};
use asep_core::oracle::{run_identity_suite, SuiteConfig};
use asep_core::quadrature::{
    evaluate_cdf_grid, evaluate_pmf, EvalRequest, InitialData, DEFAULT_QUAD_POINTS,
};
use asep_core::scalar::{parse_rational, HopRates, ModelParams, SiteSet};
use asep_core::simulator::{estimate_cdf, SimConfig};
use asep_core::AsepError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsepStatus {
    Ok = 0,
    InvalidArgument = 1,
    ParseError = 2,
    DegenerateParameter = 3,
    Pole = 4,
    ResourceLimit = 5,
    NullPointer = 6,
    BufferSize = 7,
    Internal = 8,
}

/// Hop rates `p`, `q`.
pub struct AsepModel {
    rates: HopRates,
}

/// Initial data: periodic, general or deterministic.
pub struct AsepProfile {
    initial: InitialData,
}

/// Numerical options; zero fields select the defaults.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsepEvalOptions {
    /// Series cap; 0 means `l + 4`.
    pub k_max: usize,
    /// 0 means 1e-6.
    pub tolerance: f64,
    /// Nodes per circle for the leading term; 0 means 48.
    pub quad_points: usize,
    /// Contour radius; 0 picks it automatically.
    pub radius: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AsepCdfValue {
    pub l: usize,
    pub x: i64,
    pub value: f64,
    pub imag_residual: f64,
    pub tail_estimate: f64,
    pub quad_error_estimate: f64,
    pub series_converged: bool,
    pub quadrature_converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = text);
}

fn status_of(e: &AsepError) -> AsepStatus {
    match e {
        AsepError::InvalidParameter(_) | AsepError::Domain(_) => AsepStatus::InvalidArgument,
        AsepError::Parse(_) => AsepStatus::ParseError,
        AsepError::DegenerateParameter(_)
        | AsepError::SingularParameter(_)
        | AsepError::DivisionByZero => AsepStatus::DegenerateParameter,
        AsepError::Pole(_) => AsepStatus::Pole,
        AsepError::Resource(_) => AsepStatus::ResourceLimit,
    }
}

struct Failure(AsepStatus, String);

impl From<AsepError> for Failure {
    fn from(e: AsepError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AsepStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            AsepStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AsepStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AsepStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(AsepStatus::ParseError, format!("{what} is not valid UTF-8")))
}

unsafe fn read_str_array<'a>(
    ptr: *const *const c_char,
    len: usize,
    what: &str,
) -> Result<Vec<&'a str>, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    (0..len).map(|i| read_str(*ptr.add(i), what)).collect()
}

unsafe fn out_slice<'a, T>(
    ptr: *mut T,
    len: usize,
    needed: usize,
    what: &str,
) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len < needed {
        return Err(Failure(
            AsepStatus::BufferSize,
            format!("{what} holds {len} entries, {needed} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, needed))
}

fn window_len(x_min: i64, x_max: i64) -> Result<usize, Failure> {
    if x_min > x_max {
        return Err(Failure(
            AsepStatus::InvalidArgument,
            format!("empty x range {x_min}..={x_max}"),
        ));
    }
    Ok((x_max - x_min + 1) as usize)
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn asep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn asep_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn asep_eval_options_default() -> AsepEvalOptions {
    AsepEvalOptions {
        k_max: 0,
        tolerance: 1e-6,
        quad_points: DEFAULT_QUAD_POINTS,
        radius: 0.0,
    }
}

/// # Safety
/// `p` and `q` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asep_model_new(
    p: *const c_char,
    q: *const c_char,
    out: *mut *mut AsepModel,
) -> AsepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = parse_rational(read_str(p, "p")?)?;
        let q = parse_rational(read_str(q, "q")?)?;
        store(
            out,
            AsepModel {
                rates: HopRates::new(p, q)?,
            },
        );
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`asep_model_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn asep_model_free(model: *mut AsepModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Periodic profile: `rho[r]` is the density on sites `n ≡ r (mod m)`.
///
/// # Safety
/// `rho` must point to `m` NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asep_profile_periodic_new(
    rho: *const *const c_char,
    m: usize,
    out: *mut *mut AsepProfile,
) -> AsepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let values = read_str_array(rho, m, "rho")?;
        store(
            out,
            AsepProfile {
                initial: InitialData::Periodic(RhoProfile::parse(&values)?),
            },
        );
        Ok(())
    })
}

/// Profile with `rho[n - 1]` on sites `1..=n`, empty beyond.
///
/// # Safety
/// `rho` must point to `n` NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asep_profile_general_new(
    rho: *const *const c_char,
    n: usize,
    out: *mut *mut AsepProfile,
) -> AsepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let values = read_str_array(rho, n, "rho")?;
        store(
            out,
            AsepProfile {
                initial: InitialData::General(GeneralRhoProfile::parse(&values)?),
            },
        );
        Ok(())
    })
}

/// Deterministic initial data on the strictly increasing positive sites `y`.
///
/// # Safety
/// `y` must point to `n` integers; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asep_profile_deterministic_new(
    y: *const i64,
    n: usize,
    out: *mut *mut AsepProfile,
) -> AsepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if y.is_null() && n > 0 {
            return Err(null("y"));
        }
        let sites = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(y, n).to_vec()
        };
        store(
            out,
            AsepProfile {
                initial: InitialData::Deterministic(SiteSet::new(sites)?),
            },
        );
        Ok(())
    })
}

/// # Safety
/// `profile` must come from an `asep_profile_*_new` call or be null.
#[no_mangle]
pub unsafe extern "C" fn asep_profile_free(profile: *mut AsepProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

unsafe fn request(
    model: *const AsepModel,
    profile: *const AsepProfile,
    l: usize,
    x: i64,
    t: f64,
    options: *const AsepEvalOptions,
) -> Result<EvalRequest, Failure> {
    let model = model.as_ref().ok_or_else(|| null("model"))?;
    let profile = profile.as_ref().ok_or_else(|| null("profile"))?;
    let options = options
        .as_ref()
        .copied()
        .unwrap_or_else(|| asep_eval_options_default());
    let params = ModelParams::from_rates(model.rates.clone())?;
    let mut req = EvalRequest::new(l, x, t, profile.initial.clone(), params);
    req.k_max = (options.k_max > 0).then_some(options.k_max);
    req.tolerance = if options.tolerance == 0.0 {
        1e-6
    } else {
        options.tolerance
    };
    req.quad_points = if options.quad_points == 0 {
        DEFAULT_QUAD_POINTS
    } else {
        options.quad_points
    };
    req.radius = (options.radius != 0.0).then_some(options.radius);
    Ok(req)
}

/// `P(x_l(t) <= x)` for every `x` in `x_min..=x_max`, written to `out[0..len]`
/// where `len >= x_max - x_min + 1`. `options` may be null.
///
/// # Safety
/// Handles must be live; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn asep_evaluate_cdf(
    model: *const AsepModel,
    profile: *const AsepProfile,
    l: usize,
    t: f64,
    x_min: i64,
    x_max: i64,
    options: *const AsepEvalOptions,
    out: *mut AsepCdfValue,
    len: usize,
) -> AsepStatus {
    guard(|| {
        let needed = window_len(x_min, x_max)?;
        let out = out_slice(out, len, needed, "out")?;
        let req = request(model, profile, l, x_min, t, options)?;
        let results = evaluate_cdf_grid(&req, &[l], x_min..=x_max)?;
        for (slot, r) in out.iter_mut().zip(&results) {
            *slot = AsepCdfValue {
                l: r.l,
                x: r.x,
                value: r.value,
                imag_residual: r.imag_residual,
                tail_estimate: r.tail_estimate,
                quad_error_estimate: r.quad_error_estimate,
                series_converged: r.series_converged,
                quadrature_converged: r.quadrature_converged,
            };
        }
        Ok(())
    })
}

/// `P(x_l(t) = x)`. `options` may be null.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asep_evaluate_pmf(
    model: *const AsepModel,
    profile: *const AsepProfile,
    l: usize,
    t: f64,
    x: i64,
    options: *const AsepEvalOptions,
    out: *mut f64,
) -> AsepStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let req = request(model, profile, l, x, t, options)?;
        *out = evaluate_pmf(&req)?.value;
        Ok(())
    })
}

/// Monte Carlo estimate of `P(x_l(t) <= x)` for `l = 1..=l_max` and
/// `x = x_min..=x_max`, row-major by `l`. `horizon = 0` selects the default.
///
/// # Safety
/// Handles must be live; `p_hat` and `std_error` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn asep_simulate_cdf(
    model: *const AsepModel,
    profile: *const AsepProfile,
    t: f64,
    l_max: usize,
    x_min: i64,
    x_max: i64,
    trials: u64,
    seed: u64,
    horizon: usize,
    p_hat: *mut f64,
    std_error: *mut f64,
    len: usize,
) -> AsepStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let profile = profile.as_ref().ok_or_else(|| null("profile"))?;
        let needed = window_len(x_min, x_max)?
            .checked_mul(l_max)
            .ok_or_else(|| Failure(AsepStatus::InvalidArgument, "window too large".into()))?;
        let p_hat = out_slice(p_hat, len, needed, "p_hat")?;
        let std_error = out_slice(std_error, len, needed, "std_error")?;
        let mut config = SimConfig::new(
            model.rates.clone(),
            t,
            profile.initial.clone(),
            l_max,
            x_min,
            x_max,
        );
        config.trials = trials;
        config.seed = seed;
        config.horizon = (horizon > 0).then_some(horizon);
        let cdf = estimate_cdf(&config)?;
        for (i, pt) in cdf.points.iter().enumerate() {
            p_hat[i] = pt.p_hat;
            std_error[i] = pt.stderr;
        }
        Ok(())
    })
}

/// Runs the exact identity suite with default size caps. `checks` and
/// `failures` receive the number of comparisons and of mismatches.
///
/// # Safety
/// `checks` and `failures` must be writable.
#[no_mangle]
pub unsafe extern "C" fn asep_run_identities(
    seed: u64,
    trials: usize,
    checks: *mut usize,
    failures: *mut usize,
) -> AsepStatus {
    guard(|| {
        if checks.is_null() || failures.is_null() {
            return Err(null("checks/failures"));
        }
        let config = SuiteConfig {
            seed,
            trials,
            ..SuiteConfig::default()
        };
        let reports = run_identity_suite(&config)?;
        *checks = reports.len();
        *failures = reports.iter().filter(|r| !r.equal).count();
        Ok(())
    })
}
