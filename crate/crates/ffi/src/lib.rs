//! C interface to `ebwave`.
//!
//! Objects are exposed as opaque handles created by `*_new` / `*_from_json`
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`EbwStatus`]; on failure a description is available from
//! [`ebw_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ebwave::estimator::{estimate, DeltaPolicy, Estimate};
use ebwave::families::FamilyConfig;
use ebwave::lepski::{self, LambdaChoice, LevelGrid};
use ebwave::oracle::PriorConfig;
use ebwave::{Error, FamilyModel, PosteriorSpec, PriorModel, ScalingBasis};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EbwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DomainError = 3,
    LowDensity = 4,
    SingularSystem = 5,
    NumericalFailure = 6,
    IoError = 7,
    Panic = 8,
}

/// Tabulated scaling function.
pub struct EbwBasis(ScalingBasis);

/// Conditional family with its declared parameter ranges.
pub struct EbwFamily(FamilyModel);

/// Family plus prior; gives the exact Bayes rule.
pub struct EbwPosterior(PosteriorSpec);

/// Estimate at one point with its diagnostics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EbwEstimate {
    pub t_hat: f64,
    pub m: i32,
    pub size: usize,
    pub delta: f64,
    pub min_eigenvalue: f64,
    pub samples_near: usize,
    pub low_density: bool,
}

impl From<&Estimate> for EbwEstimate {
    fn from(e: &Estimate) -> Self {
        EbwEstimate {
            t_hat: e.t_hat,
            m: e.m,
            size: e.size,
            delta: e.delta,
            min_eigenvalue: e.min_eigenvalue,
            samples_near: e.samples_near,
            low_density: e.low_density,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EbwStatus {
    match e {
        Error::Config(_)
        | Error::UnknownWavelet(_)
        | Error::InsufficientRegularity { .. }
        | Error::InvalidNu { .. }
        | Error::EmptyGrid
        | Error::EmptyData
        | Error::UnsupportedFamily(_) => EbwStatus::InvalidArgument,
        Error::DomainViolation { .. } | Error::NegativeDensity { .. } | Error::VanishingMarginal(_) => {
            EbwStatus::DomainError
        }
        Error::LowDensity { .. } => EbwStatus::LowDensity,
        Error::SingularSystem => EbwStatus::SingularSystem,
        Error::Io(_) => EbwStatus::IoError,
        _ => EbwStatus::NumericalFailure,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (EbwStatus, String)>) -> EbwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EbwStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EbwStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (EbwStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (EbwStatus, String) {
    (EbwStatus::NullPointer, format!("null pointer: {what}"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (EbwStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (EbwStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn data_arg<'a>(data: *const f64, len: usize) -> Result<&'a [f64], (EbwStatus, String)> {
    if data.is_null() {
        return Err(null("data"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

fn json_err(e: impl std::fmt::Display) -> (EbwStatus, String) {
    (EbwStatus::InvalidArgument, e.to_string())
}

/// Message for the most recent failure on this thread, or NULL. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ebw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ebw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a basis, e.g. `("db8", 12)`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ebw_basis_new(name: *const c_char, depth: u32, out: *mut *mut EbwBasis) -> EbwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = str_arg(name, "name")?;
        let basis = ScalingBasis::build(name, depth).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(EbwBasis(basis)));
        Ok(())
    })
}

/// # Safety
/// `basis` must come from [`ebw_basis_new`] (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ebw_basis_free(basis: *mut EbwBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// `φ^(order)(x)` for `order` in 0..=2.
///
/// # Safety
/// `basis` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ebw_basis_eval(basis: *const EbwBasis, x: f64, order: u32, out: *mut f64) -> EbwStatus {
    guard(|| {
        let basis = basis.as_ref().ok_or_else(|| null("basis"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if order > 2 {
            return Err((EbwStatus::InvalidArgument, format!("derivative order {order} > 2")));
        }
        *out = basis.0.eval(x, order as usize);
        Ok(())
    })
}

/// Parses a family from JSON such as `{"family": "normal", "sigma": 1}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ebw_family_from_json(json: *const c_char, out: *mut *mut EbwFamily) -> EbwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: FamilyConfig = serde_json::from_str(str_arg(json, "json")?).map_err(json_err)?;
        let family = FamilyModel::from_config(&cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(EbwFamily(family)));
        Ok(())
    })
}

/// # Safety
/// `family` must come from [`ebw_family_from_json`] (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ebw_family_free(family: *mut EbwFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

/// Estimate at a fixed level `m` with ridge `δ = delta_mult·2^{m/2} n^{-1/2}`.
///
/// # Safety
/// `data` must point to `len` doubles; the handles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ebw_estimate(
    family: *const EbwFamily,
    basis: *const EbwBasis,
    data: *const f64,
    len: usize,
    y: f64,
    m: i32,
    delta_mult: f64,
    out: *mut EbwEstimate,
) -> EbwStatus {
    guard(|| {
        let family = family.as_ref().ok_or_else(|| null("family"))?;
        let basis = basis.as_ref().ok_or_else(|| null("basis"))?;
        let data = data_arg(data, len)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(delta_mult > 0.0) {
            return Err((EbwStatus::InvalidArgument, "delta_mult must be positive".into()));
        }
        let est = estimate(&family.0, &basis.0, data, y, m, DeltaPolicy::Scaled(delta_mult)).map_err(lib_err)?;
        *out = EbwEstimate::from(&est);
        Ok(())
    })
}

/// Estimate at the Lepski-selected level (calibrated threshold times
/// `lambda_mult`, levels `1..=⌊log₂ n⌋ − 1`).
///
/// # Safety
/// `data` must point to `len` doubles; the handles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ebw_estimate_auto(
    family: *const EbwFamily,
    basis: *const EbwBasis,
    data: *const f64,
    len: usize,
    y: f64,
    lambda_mult: f64,
    out: *mut EbwEstimate,
) -> EbwStatus {
    guard(|| {
        let family = family.as_ref().ok_or_else(|| null("family"))?;
        let basis = basis.as_ref().ok_or_else(|| null("basis"))?;
        let data = data_arg(data, len)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if !(lambda_mult > 0.0) {
            return Err((EbwStatus::InvalidArgument, "lambda_mult must be positive".into()));
        }
        let grid = LevelGrid::desk(len).map_err(lib_err)?;
        let gamma = lepski::gamma_table(&family.0, &basis.0, y, &grid.levels).map_err(lib_err)?;
        let trace = lepski::select_level(
            &family.0,
            &basis.0,
            data,
            y,
            &grid,
            LambdaChoice::calibrated(lambda_mult),
            &gamma,
        )
        .map_err(lib_err)?;
        let est = estimate(&family.0, &basis.0, data, y, trace.m_hat, DeltaPolicy::Scaled(1.0)).map_err(lib_err)?;
        *out = EbwEstimate::from(&est);
        Ok(())
    })
}

/// Builds a family/prior pair from two JSON documents.
///
/// # Safety
/// Both strings must be NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ebw_posterior_from_json(
    family_json: *const c_char,
    prior_json: *const c_char,
    out: *mut *mut EbwPosterior,
) -> EbwStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let fam: FamilyConfig = serde_json::from_str(str_arg(family_json, "family_json")?).map_err(json_err)?;
        let prior: PriorConfig = serde_json::from_str(str_arg(prior_json, "prior_json")?).map_err(json_err)?;
        let spec = PosteriorSpec::new(
            FamilyModel::from_config(&fam).map_err(lib_err)?,
            PriorModel::from_config(&prior).map_err(lib_err)?,
        )
        .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(EbwPosterior(spec)));
        Ok(())
    })
}

/// # Safety
/// `post` must come from [`ebw_posterior_from_json`] (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ebw_posterior_free(post: *mut EbwPosterior) {
    if !post.is_null() {
        drop(Box::from_raw(post));
    }
}

/// Exact posterior mean `t(y)`.
///
/// # Safety
/// `post` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ebw_bayes_t(post: *const EbwPosterior, y: f64, out: *mut f64) -> EbwStatus {
    guard(|| {
        let post = post.as_ref().ok_or_else(|| null("posterior"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = post.0.bayes_t(y).map_err(lib_err)?;
        Ok(())
    })
}

/// Marginal density `p(y)`.
///
/// # Safety
/// `post` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ebw_marginal(post: *const EbwPosterior, y: f64, out: *mut f64) -> EbwStatus {
    guard(|| {
        let post = post.as_ref().ok_or_else(|| null("posterior"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = post.0.marginal_p(y).map_err(lib_err)?;
        Ok(())
    })
}
